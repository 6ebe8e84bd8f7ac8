"""Chat-completion backends: OpenAI-compatible remote client, record/replay log, gold oracle."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol

import httpx

from .errors import AuthError, BackendError, BackendExhausted, ContentRefusal, ReplayMiss, TemplateError
from .prompting import PromptTemplate, default_template, render_response
from .taxonomy import CANONICAL_ORDER, ErrorType, Verdict

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
DEFAULT_MODEL = "gpt-3.5-turbo-0125"


@dataclass(frozen=True)
class ChatRequest:
    model_name: str
    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    max_output_tokens: int = 1024

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple((r, c) for r, c in self.messages))
        if not any(role == "user" for role, _ in self.messages):
            raise ValueError("a chat request needs at least one user message")
        for role, _ in self.messages:
            if role not in ROLES:
                raise ValueError(f"unknown role {role!r}")
        if not (self.temperature >= 0 and self.temperature != float("inf")):
            raise ValueError("temperature must be finite and non-negative")

    @classmethod
    def user(cls, prompt: str, model_name: str = DEFAULT_MODEL, **kwargs) -> "ChatRequest":
        return cls(model_name, (("user", prompt),), **kwargs)

    @property
    def prompt(self) -> str:
        return [c for r, c in self.messages if r == "user"][-1]

    def to_wire(self) -> dict[str, Any]:
        return {
            "model": self.model_name,
            "messages": [{"role": r, "content": c} for r, c in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_output_tokens,
        }

    @property
    def hash(self) -> str:
        blob = json.dumps(self.to_wire(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class Completion:
    text: str
    usage: dict[str, Any] = field(default_factory=dict)
    retries: int = 0
    request_hash: str = ""


class Backend(Protocol):
    kind: str

    def complete(self, request: ChatRequest) -> Completion: ...


@dataclass
class BackendConfig:
    kind: str = "remote"
    endpoint: str = "https://api.openai.com/v1"
    credentials_env: str | None = "OPENAI_API_KEY"
    retry_limit: int = 5
    backoff_base: float = 1.0
    timeout: float = 60.0
    max_in_flight: int = 8
    requests_per_second: float | None = None
    session_path: str | None = None
    audit_path: str | None = None
    seed: int = 0
    flip_probability: float = 0.0

    KINDS = ("remote", "replay", "record", "oracle")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.retry_limit < 0:
            raise ValueError("retry_limit must be >= 0")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class TokenBucket:
    """Client-side rate limiter; ``acquire`` blocks until a token is available."""

    def __init__(self, rate: float, capacity: float | None = None, clock=time.monotonic, sleep=time.sleep):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate
        self.capacity = capacity if capacity is not None else max(1.0, rate)
        self._tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1:
                    self._tokens -= 1
                    return
                wait = (1 - self._tokens) / self.rate
            self._sleep(wait)


class RemoteBackend:
    """OpenAI-compatible ``/chat/completions`` client with retries and an audit log."""

    kind = "remote"
    TRANSIENT_STATUS = frozenset({408, 409, 429})

    def __init__(
        self,
        endpoint: str,
        credentials_env: str | None = "OPENAI_API_KEY",
        retry_limit: int = 5,
        backoff_base: float = 1.0,
        timeout: float = 60.0,
        max_in_flight: int = 8,
        rate_limiter: TokenBucket | None = None,
        audit_path: str | Path | None = None,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.url = endpoint.rstrip("/") + "/chat/completions"
        self.credentials_env = credentials_env
        self.retry_limit = retry_limit
        self.backoff_base = backoff_base
        self.rate_limiter = rate_limiter
        self.audit_path = Path(audit_path) if audit_path else None
        self._client = client or httpx.Client(timeout=timeout)
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._audit_lock = threading.Lock()
        self._sleep = sleep
        self.retry_counts: list[int] = []

    @classmethod
    def from_config(cls, config: BackendConfig) -> "RemoteBackend":
        bucket = TokenBucket(config.requests_per_second) if config.requests_per_second else None
        return cls(
            config.endpoint,
            credentials_env=config.credentials_env,
            retry_limit=config.retry_limit,
            backoff_base=config.backoff_base,
            timeout=config.timeout,
            max_in_flight=config.max_in_flight,
            rate_limiter=bucket,
            audit_path=config.audit_path,
        )

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.credentials_env:
            key = os.environ.get(self.credentials_env, "").strip()
            if not key:
                raise AuthError(f"environment variable {self.credentials_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _audit(self, request: ChatRequest, status: int | None, body: Any, retries: int) -> None:
        if self.audit_path is None:
            return
        entry = {"request_hash": request.hash, "status": status, "retries": retries,
                 "body": body, "time": _now()}
        with self._audit_lock:
            self.audit_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.audit_path, "a", encoding="utf-8") as handle:
                handle.write(json.dumps(entry, ensure_ascii=False) + "\n")

    def _backoff(self, attempt: int, response: httpx.Response | None) -> float:
        if response is not None:
            retry_after = response.headers.get("retry-after")
            if retry_after:
                try:
                    return float(retry_after)
                except ValueError:
                    pass
        return self.backoff_base * (2 ** attempt)

    def complete(self, request: ChatRequest) -> Completion:
        headers = self._headers()
        last_error = "no attempt made"
        with self._slots:
            for attempt in range(self.retry_limit + 1):
                if self.rate_limiter is not None:
                    self.rate_limiter.acquire()
                response = None
                try:
                    response = self._client.post(self.url, json=request.to_wire(), headers=headers)
                except httpx.TimeoutException as exc:
                    last_error = f"timeout: {exc}"
                except httpx.TransportError as exc:
                    last_error = f"transport error: {exc}"
                else:
                    status = response.status_code
                    if status in (401, 403):
                        raise AuthError(f"endpoint rejected credentials (HTTP {status})")
                    if status in self.TRANSIENT_STATUS or status >= 500:
                        last_error = f"HTTP {status}"
                    elif status >= 400:
                        raise BackendError(f"HTTP {status}: {response.text[:500]}")
                    else:
                        self.retry_counts.append(attempt)
                        return self._parse(request, response, attempt)
                if attempt < self.retry_limit:
                    log.info("retrying request %s after %s", request.hash[:12], last_error)
                    self._sleep(self._backoff(attempt, response))
        raise BackendExhausted(f"gave up after {self.retry_limit} retries: {last_error}")

    def _parse(self, request: ChatRequest, response: httpx.Response, retries: int) -> Completion:
        try:
            body = response.json()
        except ValueError:
            raise BackendError("response body is not JSON") from None
        self._audit(request, response.status_code, body, retries)
        try:
            choice = body["choices"][0]
            message = choice["message"]
        except (KeyError, IndexError, TypeError):
            raise BackendError("response has no choices[0].message") from None
        content = message.get("content")
        if message.get("refusal") or choice.get("finish_reason") == "content_filter" or content is None:
            raise ContentRefusal(message.get("refusal") or "model refused to answer")
        return Completion(content, body.get("usage") or {}, retries, request.hash)


def read_session(path: str | Path) -> dict[str, dict[str, Any]]:
    entries: dict[str, dict[str, Any]] = {}
    path = Path(path)
    if not path.exists():
        return entries
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                entry = json.loads(line)
                entries.setdefault(entry["request_hash"], entry)
    return entries


class ReplayBackend:
    kind = "replay"

    def __init__(self, session_path: str | Path):
        self.session_path = Path(session_path)
        self._entries = read_session(self.session_path)

    def complete(self, request: ChatRequest) -> Completion:
        entry = self._entries.get(request.hash)
        if entry is None:
            raise ReplayMiss(request.hash)
        return Completion(entry["response"], entry.get("usage") or {}, 0, request.hash)


class RecordingBackend:
    """Wraps another backend and appends every exchange to a session log."""

    kind = "record"

    def __init__(self, inner: Backend, session_path: str | Path):
        self.inner = inner
        self.session_path = Path(session_path)
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> Completion:
        started = _now()
        completion = self.inner.complete(request)
        entry = {
            "request_hash": request.hash,
            "request": request.to_wire(),
            "response": completion.text,
            "usage": completion.usage,
            "started": started,
            "finished": _now(),
        }
        with self._lock:
            self.session_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.session_path, "a", encoding="utf-8") as handle:
                handle.write(json.dumps(entry, ensure_ascii=False) + "\n")
        return completion


def record_and_replay(session_path: str | Path, inner: Backend | None = None) -> Backend:
    """Recording backend around ``inner`` if given, otherwise a replay-only backend."""
    if inner is not None:
        return RecordingBackend(inner, session_path)
    return ReplayBackend(session_path)


def _norm(text: str) -> str:
    return " ".join(text.split())


class OracleBackend:
    """Answers prompts from known labels instead of a model.

    ``answers`` maps summary text (or fragments of it, such as planted sentences) to
    the verdict the oracle should give. A prompt's summary slot is answered with the
    exact entry when one exists, otherwise with the union over every entry that
    contains the slot text or is contained in it. With ``flip_probability`` each
    answer's consistency is flipped independently, seeded per request.
    """

    kind = "oracle"

    def __init__(
        self,
        answers: Mapping[str, Verdict | Iterable[ErrorType]],
        template: PromptTemplate | None = None,
        flip_probability: float = 0.0,
        seed: int = 0,
        default: Verdict | None = None,
    ):
        self.template = template or default_template()
        self.flip_probability = flip_probability
        self.seed = seed
        self.default = default
        self._answers: dict[str, Verdict] = {}
        for text, value in answers.items():
            verdict = value if isinstance(value, Verdict) else Verdict.from_types(value)
            self._answers[_norm(text)] = verdict

    @classmethod
    def from_examples(cls, examples, **kwargs) -> "OracleBackend":
        answers: dict[str, Verdict] = {}
        for ex in examples:
            gold = ex.gold
            if gold.kind == "score":
                answers[ex.summary] = Verdict(True, score=gold.score)
            else:
                answers[ex.summary] = Verdict(gold.kind == "consistent", gold.types)
        return cls(answers, **kwargs)

    def _lookup(self, summary: str) -> Verdict:
        key = _norm(summary)
        if key in self._answers:
            return self._answers[key]
        hits = [v for text, v in self._answers.items() if text in key or key in text]
        if not hits:
            if self.default is None:
                raise BackendError("oracle has no answer for this summary")
            return self.default
        types = frozenset().union(*(v.types for v in hits))
        scores = [v.score for v in hits if v.score is not None]
        return Verdict(all(v.consistent for v in hits), types, score=min(scores) if scores else None)

    def complete(self, request: ChatRequest) -> Completion:
        prompt = request.prompt
        try:
            summary = self.template.extract_slots(prompt)["summary"]
        except TemplateError:
            raise BackendError("oracle received a prompt from an unknown template") from None
        verdict = self._lookup(summary)
        if self.flip_probability > 0:
            rng = random.Random(f"{self.seed}:{request.hash}")
            if rng.random() < self.flip_probability:
                if verdict.consistent:
                    verdict = Verdict(False, {rng.choice(CANONICAL_ORDER)}, score=verdict.score)
                else:
                    verdict = Verdict(True, score=verdict.score)
        score = verdict.score
        if "- Score:" in prompt and score is None:
            score = 10.0 if verdict.consistent else 1.0
        answer = Verdict(verdict.consistent, verdict.types, "oracle answer from gold labels", score)
        return Completion(render_response(answer), {}, 0, request.hash)


def make_backend(config: BackendConfig, oracle_answers=None, inner: Backend | None = None) -> Backend:
    if config.kind == "remote":
        return RemoteBackend.from_config(config)
    if config.kind == "replay":
        if not config.session_path:
            raise ValueError("replay backend needs a session_path")
        return ReplayBackend(config.session_path)
    if config.kind == "record":
        if not config.session_path:
            raise ValueError("record backend needs a session_path")
        return RecordingBackend(inner or RemoteBackend.from_config(config), config.session_path)
    if oracle_answers is None:
        raise ValueError("oracle backend needs labeled examples")
    return OracleBackend.from_examples(
        oracle_answers, flip_probability=config.flip_probability, seed=config.seed
    )
