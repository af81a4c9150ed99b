from __future__ import annotations

import json
import logging
import re
import threading
import time
from collections import Counter
from dataclasses import replace
from typing import Any, Callable, Dict, List, Optional, Protocol, Sequence, Union

from .types import (
    AuthError,
    BackendConfig,
    ChatRequest,
    ChatResponse,
    ImageRef,
    MalformedReply,
    ResponseHint,
    TransportError,
)

log = logging.getLogger(__name__)

REASK_TEXT = (
    "Your previous reply could not be parsed. Reply again with a single JSON object "
    "and nothing else: no prose, no markdown."
)

_FENCE = re.compile(r"^\s*```[a-zA-Z0-9_-]*\s*\n?(.*?)\n?\s*```\s*$", re.S)


def strip_code_fences(text: str) -> str:
    m = _FENCE.match(text)
    return m.group(1) if m else text


def parse_json_object(text: str) -> Dict[str, Any]:
    """Parse ``text`` as exactly one top-level JSON object (code fences allowed)."""
    body = strip_code_fences(text).strip()
    try:
        obj = json.loads(body)
    except json.JSONDecodeError as exc:
        raise ValueError(f"not JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ValueError("top-level JSON value is not an object")
    return obj


class ChatTransport(Protocol):
    backend_id: str

    def complete(self, request: ChatRequest) -> ChatResponse:
        """Single attempt. Raise TransportError/AuthError on failure."""


class CallRecorder:
    """Collects one record per logical chat call; optionally mirrors to a JSONL file."""

    def __init__(self, path=None):
        self.path = path
        self.records: List[Dict[str, Any]] = []
        self._lock = threading.Lock()

    def add(self, record: Dict[str, Any]) -> None:
        with self._lock:
            self.records.append(record)
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record, sort_keys=True) + "\n")

    def count(self, agent: Optional[str] = None) -> int:
        with self._lock:
            if agent is None:
                return len(self.records)
            return sum(1 for r in self.records if r["agent"] == agent)

    def by_agent(self) -> Counter:
        with self._lock:
            return Counter(r["agent"] for r in self.records)


def _describe_parts(parts: Sequence[Union[str, ImageRef]]) -> List[Any]:
    out: List[Any] = []
    for p in parts:
        out.append({"image": p.content_hash} if isinstance(p, ImageRef) else p)
    return out


class ChatClient:
    """Vision-chat access with StrictJson enforcement, retries and bounded concurrency."""

    def __init__(
        self,
        transport: ChatTransport,
        config: Optional[BackendConfig] = None,
        store=None,
        recorder: Optional[CallRecorder] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.transport = transport
        self.config = config or BackendConfig()
        self.store = store
        self.recorder = recorder if recorder is not None else CallRecorder()
        self._sleep = sleep
        self._sem = threading.BoundedSemaphore(self.config.max_concurrency)

    @property
    def max_concurrency(self) -> int:
        return self.config.max_concurrency

    @property
    def backend_id(self) -> str:
        return self.transport.backend_id

    def _send(self, request: ChatRequest) -> ChatResponse:
        delays = self.config.retry.delays()
        attempt = 0
        while True:
            try:
                with self._sem:
                    return self.transport.complete(request)
            except AuthError:
                raise
            except TransportError as exc:
                if not exc.retryable or attempt >= len(delays):
                    raise
                log.warning("transport error (%s), retrying in %.2fs", exc, delays[attempt])
                self._sleep(delays[attempt])
                attempt += 1

    def chat(self, request: ChatRequest) -> ChatResponse:
        request.validate(self.store)
        max_attempts = self.config.retry.max_attempts
        current = request
        usage = [0, 0]
        last_text = ""
        for attempt in range(1, max_attempts + 1):
            resp = self._send(current)
            usage[0] += resp.usage[0]
            usage[1] += resp.usage[1]
            last_text = resp.text
            parsed = None
            ok = bool(resp.text and resp.text.strip())
            if ok and request.response_hint is ResponseHint.STRICT_JSON:
                try:
                    parsed = parse_json_object(resp.text)
                except ValueError:
                    ok = False
            if ok:
                out = ChatResponse(
                    text=resp.text,
                    usage=(usage[0], usage[1]),
                    backend_id=resp.backend_id or self.backend_id,
                    attempts=attempt,
                    parsed=parsed,
                )
                self._record(request, out)
                return out
            current = replace(current, user_parts=list(current.user_parts) + [last_text or "(empty)", REASK_TEXT])
        self._record(request, None, failure=last_text)
        raise MalformedReply(
            f"{request.agent or 'chat'}: no acceptable reply after {max_attempts} attempts; last={last_text[:200]!r}"
        )

    def _record(self, request: ChatRequest, resp: Optional[ChatResponse], failure: str = "") -> None:
        rec = {
            "agent": request.agent,
            "backend_id": self.backend_id,
            "response_hint": request.response_hint.value,
            "system_text": request.system_text,
            "user_parts": _describe_parts(request.user_parts),
            "ok": resp is not None,
            "attempts": resp.attempts if resp else self.config.retry.max_attempts,
            "usage": list(resp.usage) if resp else [0, 0],
            "response": resp.text if resp else failure,
        }
        self.recorder.add(rec)


class ScriptedChat:
    """Test double: replies come from a list (last one repeats), a callable, or an echo."""

    backend_id = "scripted"

    def __init__(self, replies: Union[Sequence[str], Callable[[ChatRequest], str], None] = None, echo: bool = False):
        if replies is None and not echo:
            raise ValueError("ScriptedChat needs replies or echo=True")
        self._replies = replies
        self._echo = echo
        self._i = 0
        self._lock = threading.Lock()
        self.requests: List[ChatRequest] = []

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.requests.append(request)
            if self._echo:
                texts = request.texts()
                return ChatResponse(text=texts[-1] if texts else "", backend_id=self.backend_id)
            if callable(self._replies):
                return ChatResponse(text=self._replies(request), backend_id=self.backend_id)
            replies = list(self._replies)
            text = replies[min(self._i, len(replies) - 1)]
            self._i += 1
            return ChatResponse(text=text, backend_id=self.backend_id)


class RoutedChat:
    """Dispatches by ``request.agent`` to per-agent scripted replies; used to script
    a handful of agents while delegating the rest to a fallback transport."""

    backend_id = "routed"

    def __init__(self, routes: Dict[str, Any], fallback: Optional[ChatTransport] = None):
        self.routes = {k: (v if hasattr(v, "complete") else ScriptedChat(v)) for k, v in routes.items()}
        self.fallback = fallback

    def complete(self, request: ChatRequest) -> ChatResponse:
        target = self.routes.get(request.agent, self.fallback)
        if target is None:
            raise TransportError(f"no scripted route for agent {request.agent!r}", retryable=False)
        return target.complete(request)
