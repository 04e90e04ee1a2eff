from __future__ import annotations

import hashlib
import json

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from atomchain.llm import (
    BackendKind,
    BudgetExceeded,
    GenerationRequest,
    GenerationResponse,
    GenerationTimeout,
    LiveBackend,
    LLMClient,
    LLMError,
    MalformedResponse,
    Message,
    MockBackend,
    RateLimited,
    ReplayBackend,
    ReplayMiss,
    cache_key,
    load_session,
    record_session,
    with_seed,
)


def _req(text="hello", **kw):
    return GenerationRequest.chat("m", "sys", text, **kw)


def test_defaults_are_nucleus_sampling():
    r = _req()
    assert (r.temperature, r.top_p, r.top_k) == (0.8, 0.9, None)


@pytest.mark.parametrize("kw", [{"temperature": -0.1}, {"top_p": 0.0}, {"max_tokens": 0}, {"top_k": 0}])
def test_request_validation(kw):
    with pytest.raises(ValueError):
        _req(**kw)


def test_unknown_role():
    with pytest.raises(ValueError):
        Message("tool", "x")


def test_cache_key_is_sha256_of_canonical_json():
    r = _req(seed=3)
    blob = json.dumps(r.canonical(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    assert cache_key(r) == hashlib.sha256(blob.encode()).hexdigest()
    assert cache_key(r) != cache_key(with_seed(r, 4))


@given(st.text(max_size=50), st.integers(0, 10**6) | st.none())
def test_request_json_round_trip(text, seed):
    r = _req(text, seed=seed)
    back = GenerationRequest.from_json(json.loads(json.dumps(r.to_json())))
    assert back == r
    assert cache_key(back) == cache_key(r)


def _transport(handler):
    return httpx.MockTransport(handler)


def test_live_backend_posts_chat_completion(monkeypatch):
    monkeypatch.setenv("ATOMCHAIN_API_KEY", "secret")
    seen = {}

    def handler(request: httpx.Request):
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={
            "choices": [{"message": {"content": "answer"}}],
            "usage": {"prompt_tokens": 7, "completion_tokens": 2},
        })

    client = LLMClient(LiveBackend("http://x", transport=_transport(handler)))
    resp = client.generate(_req(seed=1))
    assert resp.text == "answer"
    assert (resp.prompt_tokens, resp.completion_tokens) == (7, 2)
    assert resp.backend is BackendKind.LIVE
    assert seen["auth"] == "Bearer secret"
    assert seen["body"]["top_p"] == 0.9 and seen["body"]["seed"] == 1


def test_rate_limit_is_retried_with_backoff():
    calls = []

    def handler(request):
        calls.append(1)
        if len(calls) < 3:
            return httpx.Response(429, headers={"retry-after": "2"})
        return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

    sleeps = []
    client = LLMClient(LiveBackend("http://x", transport=_transport(handler)), retries=3,
                       backoff=0.5, sleep=sleeps.append)
    assert client.generate(_req()).text == "ok"
    assert sleeps == [2.0, 2.0]


def test_timeouts_exhaust_retries():
    def handler(request):
        raise httpx.ReadTimeout("slow", request=request)

    sleeps = []
    client = LLMClient(LiveBackend("http://x", transport=_transport(handler)), retries=2,
                       backoff=0.1, sleep=sleeps.append)
    with pytest.raises(GenerationTimeout):
        client.generate(_req())
    assert sleeps == pytest.approx([0.1, 0.2])


def test_malformed_and_http_errors():
    bad = LLMClient(LiveBackend("http://x", transport=_transport(lambda r: httpx.Response(200, json={}))))
    with pytest.raises(MalformedResponse):
        bad.generate(_req())
    err = LLMClient(LiveBackend("http://x", transport=_transport(lambda r: httpx.Response(500, text="boom"))))
    with pytest.raises(LLMError):
        err.generate(_req())


def test_replay_serves_in_recording_order_then_repeats():
    r = _req()
    k = cache_key(r)
    backend = ReplayBackend()
    backend.add(k, "first")
    backend.add(k, "second")
    client = LLMClient(backend)
    assert [client.generate(r).text for _ in range(3)] == ["first", "second", "second"]
    with pytest.raises(ReplayMiss):
        client.generate(_req("other"))


def test_record_then_replay(tmp_path):
    path = tmp_path / "s.jsonl"
    mock = MockBackend([("hello", ["a", "b"])])
    rec = LLMClient(mock, recorder=record_session(path), record_all=True)
    out = [rec.generate(_req()).text for _ in range(2)]
    replay = LLMClient(load_session(path))
    assert [replay.generate(_req()).text for _ in range(2)] == out == ["a", "b"]
    assert replay.kind is BackendKind.REPLAY


def test_mock_is_not_recorded_by_default(tmp_path):
    path = tmp_path / "s.jsonl"
    LLMClient(MockBackend(default="x"), recorder=record_session(path)).generate(_req())
    assert not path.exists()


def test_mock_rules_and_callables():
    mock = MockBackend([("^count", lambda req: str(len(req.messages)))], default="fallback")
    client = LLMClient(mock)
    assert client.generate(_req("count me")).text == "2"
    assert client.generate(_req("else")).text == "fallback"
    assert len(mock.requests) == 2
    with pytest.raises(MalformedResponse):
        LLMClient(MockBackend()).generate(_req())


def test_token_budget():
    client = LLMClient(MockBackend(default="one two three"), token_budget=5)
    client.generate(_req("a b"))  # 3 prompt words (sys + a b) + 3 completion
    assert client.usage.total_tokens == 6
    with pytest.raises(BudgetExceeded):
        client.generate(_req())


def test_rate_limited_error_keeps_retry_after():
    assert RateLimited(1.5).retry_after == 1.5


def test_response_rejects_negative_tokens():
    with pytest.raises(ValueError):
        GenerationResponse("x", -1, 0, 0.0, BackendKind.MOCK, "k")
