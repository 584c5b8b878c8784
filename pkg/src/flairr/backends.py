"""Completion backends: a live HTTP chat-completion client, a deterministic
scripted backend for offline runs, and a record/replay bridge between them.

Every backend implements :meth:`Backend.complete`; the orchestrator never
depends on anything else, so scripted and live backends are interchangeable.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import requests

from .errors import BackendError, ConfigError

__all__ = [
    "TAGS",
    "DEFAULT_TEMPERATURES",
    "DEFAULT_MAX_TOKENS",
    "API_KEY_ENV",
    "CompletionRequest",
    "CompletionReply",
    "Backend",
    "ScriptEntry",
    "ScriptedBackend",
    "load_script",
    "HttpBackend",
    "RecordingBackend",
]

TAGS = ("forecaster", "refiner", "synthesis")

# Forecasting wants stable numbers; critique and synthesis benefit from a
# more exploratory temperature.
DEFAULT_TEMPERATURES = {"forecaster": 0.2, "refiner": 0.7, "synthesis": 0.7}
DEFAULT_MAX_TOKENS = 4096

API_KEY_ENV = "FLAIRR_API_KEY"

RETRY_ATTEMPTS = 3
RETRY_BACKOFF_S = (1.0, 2.0, 4.0)


@dataclass(frozen=True)
class CompletionRequest:
    """One completion call: the prompt, a routing tag, and sampling knobs."""

    prompt: str
    tag: str
    temperature: float = 0.0
    max_tokens: int = DEFAULT_MAX_TOKENS
    seed: int | None = None

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.tag not in TAGS:
            raise ValueError(f"tag must be one of {TAGS}, got {self.tag!r}")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")


@dataclass(frozen=True)
class CompletionReply:
    """The raw reply text plus transport metadata."""

    text: str
    latency_ms: float = 0.0
    backend_id: str = ""
    token_counts: tuple[int, int] | None = None


class Backend:
    """Interface every completion source implements."""

    backend_id = "backend"

    def complete(self, request: CompletionRequest) -> CompletionReply:
        raise NotImplementedError


@dataclass(frozen=True)
class ScriptEntry:
    """One scripted reply. Exactly one of ``prompt``, ``contains``, ``tag``
    is set in pattern mode; all three are None for ordinal entries."""

    reply: str
    prompt: str | None = None
    contains: str | None = None
    tag: str | None = None

    @property
    def is_ordinal(self) -> bool:
        return self.prompt is None and self.contains is None and self.tag is None

    def matches(self, request: CompletionRequest) -> bool:
        if self.prompt is not None:
            return request.prompt == self.prompt
        if self.contains is not None:
            return self.contains in request.prompt
        if self.tag is not None:
            return request.tag == self.tag
        return False


class ScriptedBackend(Backend):
    """Deterministic backend replaying fixture entries.

    Ordinal mode (no match fields anywhere) hands entries out in order and
    errors when exhausted. Pattern mode resolves each request to exactly one
    distinct reply text — zero matches or conflicting matches are errors, so
    a fixture can never silently answer the wrong question.
    """

    backend_id = "scripted"

    def __init__(self, entries: list[ScriptEntry]):
        if not entries:
            raise ValueError("script must contain at least one entry")
        ordinal_flags = {entry.is_ordinal for entry in entries}
        if len(ordinal_flags) != 1:
            raise ValueError("script mixes ordinal and pattern entries")
        self.ordinal = ordinal_flags.pop()
        self._entries = list(entries)
        self._cursor = 0
        self._lock = threading.Lock()

    @property
    def remaining(self) -> int:
        with self._lock:
            return len(self._entries) - self._cursor if self.ordinal else len(self._entries)

    def complete(self, request: CompletionRequest) -> CompletionReply:
        if self.ordinal:
            with self._lock:
                if self._cursor >= len(self._entries):
                    raise BackendError(
                        f"script exhausted after {len(self._entries)} replies "
                        f"(next request tag: {request.tag})"
                    )
                entry = self._entries[self._cursor]
                self._cursor += 1
            return CompletionReply(text=entry.reply, backend_id=self.backend_id)

        matches = [e for e in self._entries if e.matches(request)]
        texts = {e.reply for e in matches}
        if not matches:
            raise BackendError(
                f"no script entry matches request (tag {request.tag}, "
                f"prompt starts {request.prompt[:60]!r})"
            )
        if len(texts) > 1:
            raise BackendError(
                f"ambiguous script: {len(matches)} entries with {len(texts)} distinct "
                f"replies match request (tag {request.tag})"
            )
        return CompletionReply(text=matches[0].reply, backend_id=self.backend_id)


def _entry_from_json(obj: dict, where: str) -> ScriptEntry:
    if "reply" not in obj:
        raise ConfigError(f"{where}: script entry missing 'reply'")
    reply = obj["reply"]
    match = obj.get("match")
    if match is None and "prompt" in obj:
        # recording shape: {"hash", "tag", "prompt", "reply"} replays as an
        # exact-prompt pattern entry (full prompt stored, hashes are advisory)
        return ScriptEntry(reply=reply, prompt=obj["prompt"])
    if match is None or match == "ordinal" or match == {"ordinal": True}:
        return ScriptEntry(reply=reply)
    if not isinstance(match, dict) or len(match) != 1:
        raise ConfigError(f"{where}: 'match' must be one of ordinal/prompt/contains/tag")
    key, value = next(iter(match.items()))
    if key == "ordinal":
        return ScriptEntry(reply=reply)
    if key == "prompt":
        return ScriptEntry(reply=reply, prompt=str(value))
    if key == "contains":
        return ScriptEntry(reply=reply, contains=str(value))
    if key == "tag":
        if value not in TAGS:
            raise ConfigError(f"{where}: unknown tag {value!r}; expected one of {TAGS}")
        return ScriptEntry(reply=reply, tag=str(value))
    raise ConfigError(f"{where}: unknown match key {key!r}")


def load_script(path) -> ScriptedBackend:
    """Load a JSON-lines script (or a recording file) into a backend."""
    p = Path(path)
    try:
        raw = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read script {p}: {exc}") from exc
    entries: list[ScriptEntry] = []
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}:{lineno}: malformed JSON: {exc}") from exc
        entries.append(_entry_from_json(obj, f"{p}:{lineno}"))
    if not entries:
        raise ConfigError(f"{p}: script has no entries")
    return ScriptedBackend(entries)


class HttpBackend(Backend):
    """Chat-completion client over HTTP.

    Sends the widely deployed JSON shape (model, messages, temperature,
    max_tokens) with a Bearer credential taken from the ``FLAIRR_API_KEY``
    environment variable. Transport failures, 5xx, and 429 are retried with
    1s/2s/4s backoff; anything else surfaces immediately as a
    :class:`BackendError` carrying a body excerpt.
    """

    backend_id = "http"

    def __init__(
        self,
        endpoint_url: str,
        model_name: str,
        timeout_s: float = 120.0,
        session: requests.Session | None = None,
        sleeper=time.sleep,
        api_key: str | None = None,
    ):
        if not endpoint_url:
            raise ConfigError("endpoint_url must be set for the HTTP backend")
        if not model_name:
            raise ConfigError("model_name must be set for the HTTP backend")
        self.endpoint_url = endpoint_url
        self.model_name = model_name
        self.timeout_s = timeout_s
        self._session = session if session is not None else requests.Session()
        self._sleep = sleeper
        key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self._headers = {"Content-Type": "application/json"}
        if key:
            self._headers["Authorization"] = f"Bearer {key}"

    def complete(self, request: CompletionRequest) -> CompletionReply:
        payload: dict = {
            "model": self.model_name,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.seed is not None:
            payload["seed"] = request.seed

        last_error = ""
        for attempt in range(RETRY_ATTEMPTS):
            if attempt:
                self._sleep(RETRY_BACKOFF_S[attempt - 1])
            start = time.monotonic()
            try:
                response = self._session.post(
                    self.endpoint_url,
                    json=payload,
                    headers=self._headers,
                    timeout=self.timeout_s,
                )
            except requests.RequestException as exc:
                last_error = f"transport failure: {exc}"
                continue
            latency_ms = (time.monotonic() - start) * 1000.0
            if response.status_code >= 500 or response.status_code == 429:
                last_error = (
                    f"HTTP {response.status_code}: {response.text[:200]}"
                )
                continue
            if response.status_code != 200:
                raise BackendError(
                    f"HTTP {response.status_code} from {self.endpoint_url}: "
                    f"{response.text[:200]}"
                )
            try:
                body = response.json()
                text = body["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendError(
                    f"malformed completion body from {self.endpoint_url}: {exc}; "
                    f"excerpt: {response.text[:200]}"
                ) from exc
            tokens = None
            usage = body.get("usage") if isinstance(body, dict) else None
            if isinstance(usage, dict):
                tin = usage.get("prompt_tokens")
                tout = usage.get("completion_tokens")
                if isinstance(tin, int) and isinstance(tout, int):
                    tokens = (tin, tout)
            return CompletionReply(
                text=text,
                latency_ms=latency_ms,
                backend_id=f"{self.backend_id}:{self.model_name}",
                token_counts=tokens,
            )
        raise BackendError(
            f"giving up on {self.endpoint_url} after {RETRY_ATTEMPTS} attempts; "
            f"last error: {last_error}"
        )


class RecordingBackend(Backend):
    """Wraps any backend and appends one JSON line per request/reply pair.

    The full prompt is stored alongside a short content hash, so replaying
    the sink as a pattern script reproduces identical replies for identical
    prompts; hash collisions cannot lose data.
    """

    backend_id = "recording"

    def __init__(self, inner: Backend, sink):
        self.inner = inner
        self.sink = Path(sink)
        self._lock = threading.Lock()

    def complete(self, request: CompletionRequest) -> CompletionReply:
        reply = self.inner.complete(request)
        record = {
            "hash": hashlib.sha256(request.prompt.encode("utf-8")).hexdigest()[:16],
            "tag": request.tag,
            "prompt": request.prompt,
            "reply": reply.text,
        }
        line = json.dumps(record, ensure_ascii=False)
        try:
            with self._lock, open(self.sink, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
        except OSError as exc:
            raise BackendError(f"cannot append to recording {self.sink}: {exc}") from exc
        return reply
