"""LLM backends, prompt templates and the session journal.

Everything that talks to a model goes through :func:`complete`. Backends only
need a ``complete(request) -> list[str]`` method; the HTTP backend speaks the
OpenAI-compatible chat-completions protocol, the scripted backend replays
canned replies for tests and deterministic re-runs.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
import os
import random
import string
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import httpx

from .errors import (
    BackendError,
    BackendUnavailable,
    ConfigError,
    MalformedBackendReply,
    ScriptExhausted,
    TemplateError,
    TransientBackendError,
)

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
DEFAULT_MAX_TOKENS = 1024


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.role != "system" and not self.content:
            raise ValueError(f"{self.role} message needs content")

    def to_dict(self) -> dict:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class CompletionRequest:
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    n: int = 1
    max_tokens: int = DEFAULT_MAX_TOKENS
    template: str = ""
    # free-form tags (stock, date, ...) carried into the journal
    meta: Mapping[str, str] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must lie in [0, 2]")
        if self.n < 1 or self.max_tokens < 1:
            raise ValueError("n and max_tokens must be positive")
        if not any(m.role == "user" for m in self.messages):
            raise ValueError("a request needs at least one user message")

    def to_dict(self) -> dict:
        return {
            "messages": [m.to_dict() for m in self.messages],
            "temperature": self.temperature,
            "n": self.n,
            "max_tokens": self.max_tokens,
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, d: Mapping, template: str = "") -> "CompletionRequest":
        return cls(
            tuple(ChatMessage(m["role"], m["content"]) for m in d["messages"]),
            temperature=d.get("temperature", 0.0),
            n=d.get("n", 1),
            max_tokens=d.get("max_tokens", DEFAULT_MAX_TOKENS),
            template=template,
            meta=d.get("meta", {}),
        )

    def digest(self) -> str:
        body = {k: v for k, v in self.to_dict().items() if k != "meta"}
        body["template"] = self.template
        blob = json.dumps(body, sort_keys=True, ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


class Backend(Protocol):
    name: str
    max_in_flight: int

    def complete(self, request: CompletionRequest) -> list[str]: ...


class OpenAIBackend:
    """Chat-completions over HTTPS (``POST /v1/chat/completions``)."""

    def __init__(self, model: str, api_base: str | None = None, api_key: str | None = None,
                 max_in_flight: int = 4, timeout: float = 120.0, client: httpx.Client | None = None):
        api_base = api_base or os.environ.get("SEP_API_BASE")
        if not api_base:
            raise ConfigError("no API base URL; set SEP_API_BASE")
        self.model = model
        self.name = f"openai:{model}"
        self.max_in_flight = max_in_flight
        base = api_base.rstrip("/")
        self.url = base + ("/chat/completions" if base.endswith("/v1") else "/v1/chat/completions")
        key = api_key if api_key is not None else os.environ.get("SEP_API_KEY", "")
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._client = client or httpx.Client(timeout=timeout)
        self._headers = headers
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def payload(self, request: CompletionRequest) -> dict:
        return {
            "model": self.model,
            "messages": [m.to_dict() for m in request.messages],
            "temperature": request.temperature,
            "n": request.n,
            "max_tokens": request.max_tokens,
        }

    def complete(self, request: CompletionRequest) -> list[str]:
        with self._slots:
            try:
                resp = self._client.post(self.url, json=self.payload(request), headers=self._headers)
            except httpx.TransportError as exc:
                raise TransientBackendError(f"transport failure: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientBackendError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            choices = sorted(resp.json()["choices"], key=lambda c: c.get("index", 0))
            return [c["message"]["content"] for c in choices]
        except (ValueError, KeyError, TypeError) as exc:
            raise MalformedBackendReply(f"cannot decode chat-completions reply: {exc}") from exc


class ScriptedBackend:
    """Deterministic mock: canned replies consumed FIFO per template name.

    Entries seeded from a journal carry the digest of the request that produced
    them; a request whose digest is queued takes those replies first, which
    keeps replays faithful even when the original run finished calls out of order.
    """

    name = "mock"
    max_in_flight = 1

    def __init__(self, script: Mapping[str, Iterable[str]] | None = None):
        self._queues: dict[str, deque] = {}
        self._lock = threading.Lock()
        for template, replies in (script or {}).items():
            for r in replies:
                self.push(template, r)

    def push(self, template: str, reply: str, digest: str | None = None) -> None:
        self._queues.setdefault(template, deque()).append((reply, digest))

    def remaining(self, template: str | None = None) -> int:
        if template is not None:
            return len(self._queues.get(template, ()))
        return sum(len(q) for q in self._queues.values())

    def complete(self, request: CompletionRequest) -> list[str]:
        with self._lock:
            q = self._queues.get(request.template, deque())
            digest = request.digest()
            tagged = [i for i, (_, d) in enumerate(q) if d == digest][: request.n]
            picks = tagged if len(tagged) == request.n else list(range(min(request.n, len(q))))
            if len(picks) < request.n:
                raise ScriptExhausted(
                    f"script for template {request.template!r} has {len(q)} replies, {request.n} requested")
            replies = [q[i][0] for i in picks]
            for i in reversed(picks):
                del q[i]
            return replies

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        """Load ``{template, reply}`` / ``{template, replies}`` lines, journals included."""
        mock = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                digest = rec.get("digest")
                replies = rec["replies"] if "replies" in rec else [rec["reply"]]
                for r in replies:
                    mock.push(rec["template"], r, digest)
        return mock


class CallbackBackend:
    """Backend answering through a Python function; handy for rule-based fakes."""

    def __init__(self, fn: Callable[[CompletionRequest], list[str]], name: str = "callback"):
        self.fn = fn
        self.name = name
        self.max_in_flight = 1
        self._lock = threading.Lock()

    def complete(self, request: CompletionRequest) -> list[str]:
        with self._lock:
            return list(self.fn(request))


class Journal:
    """Append-only ``sessions.jsonl`` of every request and its replies."""

    def __init__(self, path: str | Path, clock: Callable[[], dt.datetime] | None = None):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._clock = clock or (lambda: dt.datetime.now(dt.timezone.utc))

    def record(self, request: CompletionRequest, replies: Sequence[str]) -> None:
        rec = {
            "template": request.template,
            "request": request.to_dict(),
            "replies": list(replies),
            "digest": request.digest(),
            "timestamp": self._clock().isoformat(),
        }
        line = json.dumps(rec, ensure_ascii=False, sort_keys=True)
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")

    def entries(self) -> list[dict]:
        if not self.path.exists():
            return []
        with open(self.path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]


class JournaledBackend:
    def __init__(self, inner: Backend, journal: Journal):
        self.inner = inner
        self.journal = journal
        self.name = inner.name
        self.max_in_flight = inner.max_in_flight

    def complete(self, request: CompletionRequest) -> list[str]:
        replies = self.inner.complete(request)
        self.journal.record(request, replies)
        return replies


def complete(backend: Backend, request: CompletionRequest, *, attempts: int = 3,
             base_delay: float = 1.0, sleep: Callable[[float], None] = time.sleep,
             jitter: Callable[[], float] = random.random) -> list[str]:
    """Send ``request`` and return exactly ``request.n`` completions.

    Transient failures are retried with jittered exponential backoff
    (``base_delay * 2**k``); after ``attempts`` tries the call fails with
    :class:`BackendUnavailable`.
    """
    last: Exception | None = None
    for k in range(attempts):
        try:
            replies = backend.complete(request)
            break
        except TransientBackendError as exc:
            last = exc
            if k + 1 < attempts:
                delay = base_delay * 2 ** k
                log.warning("backend %s: %s; retrying in %.1fs", backend.name, exc, delay)
                sleep(delay * (0.5 + jitter()))
    else:
        raise BackendUnavailable(f"{backend.name} failed after {attempts} attempts: {last}") from last
    if not isinstance(replies, list) or not all(isinstance(r, str) for r in replies):
        raise MalformedBackendReply("backend must return a list of strings")
    if len(replies) != request.n:
        raise MalformedBackendReply(f"asked for {request.n} completions, got {len(replies)}")
    return replies


_FORMATTER = string.Formatter()


@dataclass(frozen=True)
class PromptTemplate:
    """A prompt body with ``{named}`` placeholders and few-shot exemplars.

    Exemplars are ``(input, ideal response)`` pairs rendered as alternating
    user/assistant turns ahead of the live input. Literal braces are written
    doubled, as in :meth:`str.format`.
    """

    name: str
    body: str
    exemplars: tuple[tuple[str, str], ...] = ()
    system: str = ""

    def placeholders(self) -> list[str]:
        seen = []
        for _, fname, _, _ in _FORMATTER.parse(self.body):
            if fname is not None and fname not in seen:
                seen.append(fname)
        return seen


def render(template: PromptTemplate, bindings: Mapping[str, object] | None = None) -> list[ChatMessage]:
    bindings = bindings or {}
    for name in template.placeholders():
        if name == "" or name not in bindings:
            raise TemplateError(name, template.name)
    messages = []
    if template.system:
        messages.append(ChatMessage("system", template.system))
    for ex_in, ex_out in template.exemplars:
        messages.append(ChatMessage("user", ex_in))
        messages.append(ChatMessage("assistant", ex_out))
    messages.append(ChatMessage("user", template.body.format_map(dict(bindings))))
    return messages


def make_request(template: PromptTemplate, bindings: Mapping[str, object] | None = None, *,
                 temperature: float = 0.0, n: int = 1, max_tokens: int = DEFAULT_MAX_TOKENS,
                 meta: Mapping[str, str] | None = None) -> CompletionRequest:
    return CompletionRequest(tuple(render(template, bindings)), temperature=temperature, n=n,
                             max_tokens=max_tokens, template=template.name, meta=dict(meta or {}))
