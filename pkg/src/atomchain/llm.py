"""Generation backends: live chat endpoint, record/replay store, scripted mock.

All backends sit behind :class:`LLMClient`, which adds bounded retries with
exponential backoff, a concurrency limit, token budget accounting and
optional session recording.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Protocol, Sequence, Union

import httpx

log = logging.getLogger(__name__)

API_KEY_ENV = "ATOMCHAIN_API_KEY"
DEFAULT_TEMPERATURE = 0.8
DEFAULT_TOP_P = 0.9
ROLES = ("system", "user", "assistant")


class LLMError(Exception):
    pass


class GenerationTimeout(LLMError):
    pass


class RateLimited(LLMError):
    def __init__(self, retry_after: float | None = None):
        super().__init__(f"rate limited (retry after {retry_after})")
        self.retry_after = retry_after


class MalformedResponse(LLMError):
    pass


class ReplayMiss(LLMError, KeyError):
    def __init__(self, key: str):
        super().__init__(key)
        self.key = key

    def __str__(self) -> str:
        return f"no recorded response for request {self.key[:16]}..."


class BudgetExceeded(LLMError):
    pass


class BackendKind(str, Enum):
    LIVE = "LIVE"
    REPLAY = "REPLAY"
    MOCK = "MOCK"


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")


@dataclass(frozen=True)
class GenerationRequest:
    model_id: str
    messages: tuple[Message, ...]
    temperature: float = DEFAULT_TEMPERATURE
    top_p: float = DEFAULT_TOP_P
    max_tokens: int = 1024
    seed: int | None = None
    top_k: int | None = None

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("a request needs at least one message")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError(f"top_p {self.top_p} outside (0, 1]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k must be a positive integer")

    @classmethod
    def chat(cls, model_id: str, system: str, user: str, **sampling: Any) -> "GenerationRequest":
        return cls(model_id, (Message("system", system), Message("user", user)), **sampling)

    def canonical(self) -> dict[str, Any]:
        return {
            "model": self.model_id,
            "messages": [[m.role, m.content] for m in self.messages],
            "temperature": float(self.temperature),
            "top_p": float(self.top_p),
            "top_k": self.top_k,
            "max_tokens": int(self.max_tokens),
            "seed": self.seed,
        }

    def to_json(self) -> dict[str, Any]:
        body = self.canonical()
        body["messages"] = [{"role": r, "content": c} for r, c in body["messages"]]
        return body

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "GenerationRequest":
        msgs = []
        for m in obj["messages"]:
            if isinstance(m, dict):
                msgs.append(Message(m["role"], m["content"]))
            else:
                msgs.append(Message(m[0], m[1]))
        return cls(
            model_id=obj["model"],
            messages=tuple(msgs),
            temperature=obj.get("temperature", DEFAULT_TEMPERATURE),
            top_p=obj.get("top_p", DEFAULT_TOP_P),
            max_tokens=obj.get("max_tokens", 1024),
            seed=obj.get("seed"),
            top_k=obj.get("top_k"),
        )


def cache_key(req: GenerationRequest) -> str:
    """SHA-256 of the canonical JSON form of ``req``."""
    blob = json.dumps(req.canonical(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class GenerationResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int
    latency: float
    backend: BackendKind
    cache_key: str

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")


def approx_tokens(text: str) -> int:
    return len(text.split())


class Backend(Protocol):
    kind: BackendKind

    def complete(self, req: GenerationRequest, key: str) -> GenerationResponse: ...


class LiveBackend:
    """OpenAI-style chat-completions endpoint."""

    kind = BackendKind.LIVE

    def __init__(
        self,
        base_url: str,
        path: str = "/v1/chat/completions",
        api_key: str | None = None,
        timeout: float = 60.0,
        transport: httpx.BaseTransport | None = None,
    ):
        key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        headers = {"Content-Type": "application/json"}
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self.path = path
        self._http = httpx.Client(base_url=base_url, headers=headers, timeout=timeout, transport=transport)

    def complete(self, req: GenerationRequest, key: str) -> GenerationResponse:
        body: dict[str, Any] = {
            "model": req.model_id,
            "messages": [{"role": m.role, "content": m.content} for m in req.messages],
            "temperature": req.temperature,
            "top_p": req.top_p,
            "max_tokens": req.max_tokens,
        }
        if req.seed is not None:
            body["seed"] = req.seed
        if req.top_k is not None:
            body["top_k"] = req.top_k
        t0 = time.perf_counter()
        try:
            resp = self._http.post(self.path, json=body)
        except httpx.TimeoutException as err:
            raise GenerationTimeout(str(err)) from err
        latency = time.perf_counter() - t0
        if resp.status_code == 429:
            retry_after = resp.headers.get("retry-after")
            try:
                delay = float(retry_after) if retry_after is not None else None
            except ValueError:
                delay = None
            raise RateLimited(delay)
        if resp.status_code >= 400:
            raise LLMError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            data = resp.json()
            text = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as err:
            raise MalformedResponse(f"unexpected response body: {resp.text[:200]}") from err
        if not isinstance(text, str):
            raise MalformedResponse("message content is not a string")
        usage = data.get("usage") or {}
        return GenerationResponse(
            text=text,
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
            latency=latency,
            backend=BackendKind.LIVE,
            cache_key=key,
        )

    def close(self) -> None:
        self._http.close()


@dataclass
class SessionEntry:
    key: str
    request: dict[str, Any]
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency: float = 0.0

    def to_json(self) -> dict[str, Any]:
        return {
            "key": self.key,
            "request": self.request,
            "response": {
                "text": self.text,
                "prompt_tokens": self.prompt_tokens,
                "completion_tokens": self.completion_tokens,
                "latency": self.latency,
            },
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "SessionEntry":
        r = obj["response"]
        return cls(
            obj["key"],
            obj.get("request", {}),
            r["text"],
            r.get("prompt_tokens", 0),
            r.get("completion_tokens", 0),
            r.get("latency", 0.0),
        )


class ReplayBackend:
    """Serves recorded responses by cache key.

    A key recorded several times (a regenerated stage) is served in recording
    order; once exhausted the last response repeats.
    """

    kind = BackendKind.REPLAY

    def __init__(self, entries: Iterable[SessionEntry] = ()):
        self._store: dict[str, list[SessionEntry]] = {}
        self._cursor: dict[str, int] = {}
        self._lock = threading.Lock()
        for e in entries:
            self._store.setdefault(e.key, []).append(e)

    def __len__(self) -> int:
        return sum(len(v) for v in self._store.values())

    def add(self, key: str, text: str, **usage: Any) -> None:
        self._store.setdefault(key, []).append(SessionEntry(key, {}, text, **usage))

    def complete(self, req: GenerationRequest, key: str) -> GenerationResponse:
        with self._lock:
            entries = self._store.get(key)
            if not entries:
                raise ReplayMiss(key)
            n = self._cursor.get(key, 0)
            entry = entries[min(n, len(entries) - 1)]
            self._cursor[key] = n + 1
        return GenerationResponse(
            entry.text, entry.prompt_tokens, entry.completion_tokens, entry.latency,
            BackendKind.REPLAY, key,
        )


Responder = Union[str, Sequence[str], Callable[[GenerationRequest], str]]


@dataclass
class MockRule:
    pattern: re.Pattern
    response: Responder
    calls: int = 0


class MockBackend:
    """Scripted responses chosen by regex over the request's message text.

    Rules are tried in order against the last user message (falling back to
    all messages joined). A rule's response may be a string, a list served in
    order (the last repeats), or a callable of the request.
    """

    kind = BackendKind.MOCK

    def __init__(self, rules: Iterable[tuple[str, Responder]] = (), default: Responder | None = None):
        self.rules = [MockRule(re.compile(p, re.S), r) for p, r in rules]
        self.default = default
        self.requests: list[GenerationRequest] = []
        self._lock = threading.Lock()

    def add(self, pattern: str, response: Responder) -> None:
        self.rules.append(MockRule(re.compile(pattern, re.S), response))

    def _answer(self, rule_response: Responder, n: int, req: GenerationRequest) -> str:
        if callable(rule_response):
            return rule_response(req)
        if isinstance(rule_response, str):
            return rule_response
        seq = list(rule_response)
        return seq[min(n, len(seq) - 1)]

    def complete(self, req: GenerationRequest, key: str) -> GenerationResponse:
        users = [m.content for m in req.messages if m.role == "user"]
        target = users[-1] if users else ""
        everything = "\n".join(m.content for m in req.messages)
        with self._lock:
            self.requests.append(req)
            chosen: Responder | None = None
            n = 0
            for rule in self.rules:
                if rule.pattern.search(target) or rule.pattern.search(everything):
                    chosen, n = rule.response, rule.calls
                    rule.calls += 1
                    break
            if chosen is None:
                if self.default is None:
                    raise MalformedResponse("mock backend has no rule for this request")
                chosen = self.default
        text = self._answer(chosen, n, req)
        return GenerationResponse(
            text,
            sum(approx_tokens(m.content) for m in req.messages),
            approx_tokens(text),
            0.0,
            BackendKind.MOCK,
            key,
        )


class SessionRecorder:
    """Append-only JSON-lines sink of responses keyed by cache key."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, req: GenerationRequest, resp: GenerationResponse) -> None:
        entry = SessionEntry(
            resp.cache_key, req.to_json(), resp.text, resp.prompt_tokens, resp.completion_tokens, resp.latency
        )
        line = json.dumps(entry.to_json(), sort_keys=True, ensure_ascii=False) + "\n"
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line)
            fh.flush()


def record_session(sink: str | Path) -> SessionRecorder:
    return SessionRecorder(sink)


def load_session(source: str | Path) -> ReplayBackend:
    entries = []
    path = Path(source)
    if path.exists():
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    entries.append(SessionEntry.from_json(json.loads(line)))
    return ReplayBackend(entries)


@dataclass
class UsageTotals:
    calls: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


class LLMClient:
    """Uniform front end over a backend.

    Timeouts and rate limits are retried ``retries`` times with exponential
    backoff; the retried request keeps its cache key. ``record_all`` also
    records replayed and mocked responses, which is how replay stores are
    built from scripted runs.
    """

    def __init__(
        self,
        backend: Backend,
        retries: int = 3,
        backoff: float = 0.5,
        max_in_flight: int = 4,
        token_budget: int | None = None,
        recorder: SessionRecorder | None = None,
        record_all: bool = False,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.backend = backend
        self.retries = retries
        self.backoff = backoff
        self.token_budget = token_budget
        self.recorder = recorder
        self.record_all = record_all
        self.usage = UsageTotals()
        self._sleep = sleep
        self._sem = threading.BoundedSemaphore(max_in_flight)
        self._lock = threading.Lock()

    @property
    def kind(self) -> BackendKind:
        return self.backend.kind

    def generate(self, req: GenerationRequest) -> GenerationResponse:
        key = cache_key(req)
        with self._lock:
            if self.token_budget is not None and self.usage.total_tokens >= self.token_budget:
                raise BudgetExceeded(
                    f"token budget {self.token_budget} spent ({self.usage.total_tokens} used)"
                )
        attempt = 0
        while True:
            try:
                with self._sem:
                    resp = self.backend.complete(req, key)
                break
            except (GenerationTimeout, RateLimited) as err:
                if attempt >= self.retries:
                    raise
                delay = self.backoff * (2**attempt)
                if isinstance(err, RateLimited) and err.retry_after is not None:
                    delay = max(delay, err.retry_after)
                log.warning("generation attempt %d failed (%s); retrying in %.2fs", attempt + 1, err, delay)
                self._sleep(delay)
                attempt += 1
        with self._lock:
            self.usage.calls += 1
            self.usage.prompt_tokens += resp.prompt_tokens
            self.usage.completion_tokens += resp.completion_tokens
        if self.recorder is not None and (resp.backend is BackendKind.LIVE or self.record_all):
            self.recorder.append(req, resp)
        return resp


def with_seed(req: GenerationRequest, seed: int | None) -> GenerationRequest:
    return replace(req, seed=seed)
