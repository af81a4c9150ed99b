import base64
import json

import httpx
import numpy as np
import pytest

from promptsearch import templates
from promptsearch.backends import (
    ArtifactStore,
    AuthError,
    BackendConfig,
    ChatClient,
    ChatRequest,
    DimMismatch,
    HashEmbedder,
    HashImageBackend,
    HttpChatTransport,
    HttpEmbedder,
    HttpImageBackend,
    MalformedReply,
    Provenance,
    ResponseHint,
    RetryPolicy,
    ScriptedChat,
    TransportError,
    placeholder_png,
    strip_code_fences,
)
from promptsearch.backends.mock import token_direction

from conftest import no_sleep


def req(text="ping", hint=ResponseHint.FREE_TEXT, parts=None):
    return ChatRequest(system_text="sys", user_parts=parts or [text], response_hint=hint, agent="t")


def client(transport, attempts=3, store=None):
    cfg = BackendConfig(retry=RetryPolicy(max_attempts=attempts, initial_backoff_ms=0))
    return ChatClient(transport, cfg, store=store, sleep=no_sleep)


def test_echo_mock_returns_last_user_text():
    assert client(ScriptedChat(echo=True)).chat(req("ping")).text == "ping"


def test_strict_json_reask_succeeds_on_second_attempt():
    c = client(ScriptedChat(["not json", '{"a":1}']), attempts=2)
    resp = c.chat(req(hint=ResponseHint.STRICT_JSON))
    assert resp.parsed == {"a": 1} and resp.attempts == 2
    assert c.recorder.count() == 1


def test_strict_json_exhaustion():
    chat = ScriptedChat(["not json"])
    with pytest.raises(MalformedReply):
        client(chat, attempts=3).chat(req(hint=ResponseHint.STRICT_JSON))
    assert len(chat.requests) == 3


def test_code_fences_are_stripped():
    assert strip_code_fences('```json\n{"a": 2}\n```') == '{"a": 2}'
    resp = client(ScriptedChat(['```json\n{"a": 2}\n```'])).chat(req(hint=ResponseHint.STRICT_JSON))
    assert resp.parsed == {"a": 2}


def test_request_validation():
    with pytest.raises(ValueError):
        ChatRequest("s", []).validate()
    with pytest.raises(ValueError):
        ChatRequest("s", ["x"], temperature=float("nan")).validate()
    with pytest.raises(ValueError):
        ChatRequest("s", ["x"], temperature=2.5).validate()


def test_unknown_image_rejected(store):
    other = ArtifactStore()
    ref = other.put_image(placeholder_png([(1, 2, 3)]), "image/png", Provenance.HTTP, "p")
    with pytest.raises(ValueError):
        client(ScriptedChat(echo=True), store=store).chat(req(parts=["x", ref]))


def test_backoff_is_geometric():
    assert RetryPolicy(4, 100, 2.0).delays() == pytest.approx([0.1, 0.2, 0.4])
    with pytest.raises(ValueError):
        RetryPolicy(0)
    with pytest.raises(ValueError):
        RetryPolicy(2, 10, 0.5)


def test_transport_retries_bounded():
    calls = []

    class Flaky:
        backend_id = "flaky"

        def complete(self, request):
            calls.append(1)
            raise TransportError("down")

    with pytest.raises(TransportError):
        client(Flaky(), attempts=3).chat(req())
    assert len(calls) == 3


def test_mock_image_deterministic_and_seeded(store):
    t2i = HashImageBackend(store)
    a, b = t2i.generate("a red apple", 1), t2i.generate("a red apple", 1)
    c = t2i.generate("a red apple", 2)
    assert a.content_hash == b.content_hash
    assert store.contains(c) and store.read(a)
    with pytest.raises(ValueError):
        t2i.generate("", 1)


def test_store_roundtrip_on_disk(tmp_path):
    s = ArtifactStore(tmp_path)
    ref = s.put_image(placeholder_png([(9, 9, 9)]), "image/png", Provenance.HTTP, "p")
    import hashlib
    assert hashlib.sha256(s.read(ref)).hexdigest() == ref.content_hash
    sid = s.put_scene({"a": 1})
    assert len(sid) == 32 and s.get_scene(sid) == {"a": 1}


def test_synthetic_ref_needs_scene(store):
    with pytest.raises(ValueError):
        store.put_image(placeholder_png([(0, 0, 0)]), "image/png", Provenance.SYNTHETIC, "p")


def test_hash_embedder_oracle():
    e = HashEmbedder(16)
    a, a2, b = e.embed(["a", "a", "b"])
    assert a.values == a2.values and a.dim == b.dim == 16 and a.values != b.values
    # documented projection: normalized token direction
    want = token_direction("b", 16)
    want = want / np.linalg.norm(want)
    assert np.allclose(b.values, want, atol=1e-12)
    with pytest.raises(ValueError):
        e.embed([])


# -- HTTP, against an in-process transport ---------------------------------------

def _http(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


def test_http_chat_body_and_auth(monkeypatch, store):
    monkeypatch.setenv("TEST_KEY", "sk-abc")
    seen = {}

    def handler(request):
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": "hi"}}],
                                         "usage": {"prompt_tokens": 3, "completion_tokens": 1}})

    ref = store.put_image(placeholder_png([(1, 1, 1)]), "image/png", Provenance.HTTP, "p")
    cfg = BackendConfig(base_url="http://x/v1", api_key_env="TEST_KEY", model_name="m")
    t = HttpChatTransport(cfg, store, client=_http(handler))
    resp = t.complete(req(parts=["look", ref]))
    assert resp.text == "hi" and resp.usage == (3, 1)
    assert seen["auth"] == "Bearer sk-abc"
    parts = seen["body"]["messages"][1]["content"]
    assert parts[0] == {"type": "text", "text": "look"}
    assert parts[1]["image_url"]["url"].startswith("data:image/png;base64,")


def test_http_auth_error_not_retried():
    n = []

    def handler(request):
        n.append(1)
        return httpx.Response(401, json={})

    t = HttpChatTransport(BackendConfig(base_url="http://x"), client=_http(handler))
    with pytest.raises(AuthError):
        client(t, attempts=3).chat(req())
    assert len(n) == 1


def test_http_image_and_embeddings(store):
    png = placeholder_png([(5, 5, 5)])

    def handler(request):
        if request.url.path.endswith("/images/generations"):
            return httpx.Response(200, json={"data": [{"b64_json": base64.b64encode(png).decode()}]})
        body = json.loads(request.content)
        return httpx.Response(200, json={"data": [{"index": i, "embedding": [float(i), 1.0]}
                                                  for i in range(len(body["input"]))]})

    img = HttpImageBackend(BackendConfig(base_url="http://x"), store, client=_http(handler), sleep=no_sleep)
    ref = img.generate("a cat", 1)
    assert store.read(ref) == png
    emb = HttpEmbedder(BackendConfig(base_url="http://x"), client=_http(handler))
    vs = emb.embed(["a", "b"])
    assert [v.values for v in vs] == [(0.0, 1.0), (1.0, 1.0)]


def test_http_embedding_dim_mismatch():
    def handler(request):
        return httpx.Response(200, json={"data": [{"index": 0, "embedding": [1.0]}, {"index": 1, "embedding": [1.0, 2.0]}]})

    with pytest.raises(DimMismatch):
        HttpEmbedder(BackendConfig(base_url="http://x"), client=_http(handler)).embed(["a", "b"])


def test_templates_render_all_agents():
    for name in templates.AGENTS:
        t = templates.load_template(name)
        system, user = t.render(**{k: "X" for k in t.placeholders})
        assert user and "{{" not in system + user
    with pytest.raises(KeyError):
        templates.render("merge", prompt="p")
