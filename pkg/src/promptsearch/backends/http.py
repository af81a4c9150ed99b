"""OpenAI-compatible HTTP transports for chat, image generation and embeddings."""
from __future__ import annotations

import base64
import copy
import logging
import os
import threading
import time
from typing import Any, Callable, Dict, List, Optional

import httpx

from .store import ArtifactStore, text_hash
from .types import (
    AuthError,
    BackendConfig,
    ChatRequest,
    ChatResponse,
    ContentRejected,
    DimMismatch,
    EmbeddingVector,
    ImageRef,
    Provenance,
    TransportError,
)

log = logging.getLogger(__name__)

_RETRYABLE_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}


def _headers(config: BackendConfig) -> Dict[str, str]:
    headers = {"Content-Type": "application/json"}
    key = os.environ.get(config.api_key_env, "") if config.api_key_env else ""
    if key:
        headers["Authorization"] = f"Bearer {key}"
    return headers


def _check(resp: httpx.Response) -> None:
    if resp.status_code in (401, 403):
        raise AuthError(f"HTTP {resp.status_code}: authentication rejected")
    if resp.status_code in _RETRYABLE_STATUS:
        raise TransportError(f"HTTP {resp.status_code}", retryable=True)
    if resp.status_code >= 400:
        body = resp.text[:300]
        lowered = body.lower()
        if "content_policy" in lowered or "safety" in lowered or "moderation" in lowered:
            raise ContentRejected(body)
        raise TransportError(f"HTTP {resp.status_code}: {body}", retryable=False)


def _post(client: httpx.Client, url: str, payload: Dict[str, Any], config: BackendConfig) -> Dict[str, Any]:
    try:
        resp = client.post(url, json=payload, headers=_headers(config), timeout=config.timeout_ms / 1000.0)
    except httpx.TimeoutException as exc:
        raise TransportError(f"timeout: {exc}") from exc
    except httpx.TransportError as exc:
        raise TransportError(f"network: {exc}") from exc
    _check(resp)
    try:
        data = resp.json()
    except ValueError as exc:
        raise TransportError(f"non-JSON body from {url}", retryable=False) from exc
    if not isinstance(data, dict):
        raise TransportError(f"unexpected body type from {url}", retryable=False)
    return data


def _url(config: BackendConfig, path: str) -> str:
    return config.base_url.rstrip("/") + path


def data_uri(store: ArtifactStore, ref: ImageRef) -> str:
    b64 = base64.b64encode(store.read(ref)).decode("ascii")
    return f"data:{ref.media_type};base64,{b64}"


def build_chat_body(request: ChatRequest, config: BackendConfig, store: Optional[ArtifactStore]) -> Dict[str, Any]:
    content: List[Dict[str, Any]] = []
    for part in request.user_parts:
        if isinstance(part, ImageRef):
            if store is None:
                raise ValueError("image parts need an artifact store")
            content.append({"type": "image_url", "image_url": {"url": data_uri(store, part)}})
        else:
            content.append({"type": "text", "text": part})
    messages = []
    if request.system_text:
        messages.append({"role": "system", "content": request.system_text})
    messages.append({"role": "user", "content": content})
    return {
        "model": config.model_name,
        "messages": messages,
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    }


class HttpChatTransport:
    def __init__(self, config: BackendConfig, store: Optional[ArtifactStore] = None, client: Optional[httpx.Client] = None):
        self.config = config
        self.store = store
        self.client = client or httpx.Client()
        self.backend_id = f"http:{config.model_name or 'default'}"

    def complete(self, request: ChatRequest) -> ChatResponse:
        body = build_chat_body(request, self.config, self.store)
        data = _post(self.client, _url(self.config, "/chat/completions"), body, self.config)
        try:
            text = data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError):
            raise TransportError("chat response missing choices[0].message.content", retryable=False)
        if isinstance(text, list):  # some servers return content parts
            text = "".join(p.get("text", "") for p in text if isinstance(p, dict))
        usage = data.get("usage") or {}
        return ChatResponse(
            text=text,
            usage=(int(usage.get("prompt_tokens") or 0), int(usage.get("completion_tokens") or 0)),
            backend_id=self.backend_id,
        )


def _dig(data: Any, path: str) -> Any:
    cur = data
    for key in path.split("."):
        if isinstance(cur, list):
            cur = cur[int(key)]
        else:
            cur = cur[key]
    return cur


def _with_retries(config: BackendConfig, fn: Callable[[], Any], sleep: Callable[[float], None]) -> Any:
    delays = config.retry.delays()
    attempt = 0
    while True:
        try:
            return fn()
        except TransportError as exc:
            if not exc.retryable or attempt >= len(delays):
                raise
            sleep(delays[attempt])
            attempt += 1


class HttpImageBackend:
    """T2I over HTTP, either the OpenAI images API or a user-supplied JSON template."""

    def __init__(self, config: BackendConfig, store: ArtifactStore, client: Optional[httpx.Client] = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.config = config
        self.store = store
        self.client = client or httpx.Client()
        self._sem = threading.BoundedSemaphore(config.max_concurrency)
        self._sleep = sleep

    def request_body(self, prompt: str, seed: int) -> Dict[str, Any]:
        if self.config.image_mode == "openai":
            return {
                "model": self.config.model_name,
                "prompt": prompt,
                "n": 1,
                "size": self.config.image_size,
                "response_format": "b64_json",
            }
        body = copy.deepcopy(self.config.request_template or {})
        body[self.config.prompt_field] = prompt
        if "seed" in body:
            body["seed"] = seed
        return body

    def generate(self, prompt: str, seed: int) -> ImageRef:
        if not prompt or not prompt.strip():
            raise ValueError("prompt must be non-empty")
        url = _url(self.config, "/images/generations") if self.config.image_mode == "openai" else self.config.base_url
        body = self.request_body(prompt, seed)

        def call():
            with self._sem:
                return _post(self.client, url, body, self.config)

        data = _with_retries(self.config, call, self._sleep)
        try:
            raw = base64.b64decode(_dig(data, self.config.b64_path))
        except (KeyError, IndexError, TypeError, ValueError):
            raise TransportError(f"image bytes not found at {self.config.b64_path!r}", retryable=False)
        media = "image/jpeg" if raw[:3] == b"\xff\xd8\xff" else "image/png"
        return self.store.put_image(raw, media, Provenance.HTTP, prompt_id=text_hash(prompt)[:16])


class HttpEmbedder:
    def __init__(self, config: BackendConfig, client: Optional[httpx.Client] = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.config = config
        self.client = client or httpx.Client()
        self._sem = threading.BoundedSemaphore(config.max_concurrency)
        self._sleep = sleep

    def embed(self, texts: List[str]) -> List[EmbeddingVector]:
        if not texts or any(not t for t in texts):
            raise ValueError("embed needs a non-empty list of non-empty texts")
        body = {"model": self.config.model_name, "input": list(texts)}

        def call():
            with self._sem:
                return _post(self.client, _url(self.config, "/embeddings"), body, self.config)

        data = _with_retries(self.config, call, self._sleep)
        rows = sorted(data.get("data", []), key=lambda r: r.get("index", 0))
        if len(rows) != len(texts):
            raise TransportError(f"expected {len(texts)} embeddings, got {len(rows)}", retryable=False)
        dims = {len(r["embedding"]) for r in rows}
        if len(dims) != 1:
            raise DimMismatch(f"inconsistent embedding sizes {sorted(dims)}")
        return [
            EmbeddingVector(tuple(float(v) for v in r["embedding"]), text_hash(t))
            for r, t in zip(rows, texts)
        ]
