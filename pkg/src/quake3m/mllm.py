"""Chat-completion client: live HTTP, transcript replay and scripted modes.

The wire dialect is OpenAI-style ``/chat/completions`` with images sent as
base64 data-URI parts. Replay and script modes never touch the network.
"""

from __future__ import annotations

import base64
import collections
import hashlib
import json
import logging
import mimetypes
import os
import random
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence, Union

import httpx

log = logging.getLogger(__name__)

MAX_IMAGE_BYTES_ENCODED = 8 * 1024 * 1024
BACKOFF_BASE_S = 1.0
BACKOFF_FACTOR = 2.0
BACKOFF_CAP_S = 60.0
CONNECT_TIMEOUT_S = 30.0
READ_TIMEOUT_S = 120.0
RETRYABLE_STATUS = frozenset({408, 429, 500, 502, 503, 504})
API_KEY_ENV_PREFIX = "QUAKE3M_API_KEY_"


class MllmError(Exception):
    """Base class for backend failures."""


class CredentialMissingError(MllmError):
    pass


class RetriesExhaustedError(MllmError):
    def __init__(self, message: str, attempts: int, last_status: int | None = None):
        super().__init__(message)
        self.attempts = attempts
        self.last_status = last_status


class BackendHTTPError(MllmError):
    """Non-retryable HTTP status or malformed response body."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class ReplayKeyMissingError(MllmError):
    def __init__(self, tag: str):
        super().__init__(f"no recorded response for request tag {tag}")
        self.tag = tag


class ScriptExhaustedError(MllmError):
    pass


class ImageTooLargeError(ValueError):
    pass


class Mode(str, Enum):
    LIVE = "live"
    REPLAY = "replay"
    SCRIPT = "script"


class FinishReason(str, Enum):
    COMPLETE = "complete"
    TRUNCATED = "truncated"
    REFUSED = "refused"


_WIRE_FINISH = {
    "stop": FinishReason.COMPLETE,
    "end_turn": FinishReason.COMPLETE,
    "length": FinishReason.TRUNCATED,
    "max_tokens": FinishReason.TRUNCATED,
    "content_filter": FinishReason.REFUSED,
    "safety": FinishReason.REFUSED,
}


@dataclass(frozen=True)
class ImagePart:
    """An image payload. ``data`` holds raw bytes for local files; remote
    images keep ``data=None`` and are passed to the provider by URL."""

    uri: str
    data: bytes | None = None
    mime: str = "image/jpeg"

    def __post_init__(self):
        if self.data is not None and 4 * ((len(self.data) + 2) // 3) > MAX_IMAGE_BYTES_ENCODED:
            raise ImageTooLargeError(f"{self.uri}: encoded image exceeds 8 MiB")

    @classmethod
    def load(cls, uri: str, base_dir: str | Path | None = None) -> "ImagePart":
        if uri.startswith(("http://", "https://", "data:")):
            return cls(uri)
        path = Path(uri)
        if not path.is_absolute() and base_dir is not None:
            path = Path(base_dir) / path
        data = path.read_bytes()
        mime = mimetypes.guess_type(path.name)[0] or "image/jpeg"
        return cls(uri, data, mime)

    def digest(self) -> str:
        if self.data is None:
            return "url:" + self.uri
        return "sha256:" + hashlib.sha256(self.data).hexdigest()

    def wire_url(self) -> str:
        if self.data is None:
            return self.uri
        return f"data:{self.mime};base64,{base64.b64encode(self.data).decode('ascii')}"


UserPart = Union[str, ImagePart]


@dataclass(frozen=True)
class ChatRequest:
    user_parts: tuple[UserPart, ...]
    system_text: str | None = None
    temperature: float = 0.0
    max_output_tokens: int = 1024
    # Free-form label (e.g. "location", "event", "damage"); not part of the tag.
    purpose: str = ""

    def __post_init__(self):
        if not self.user_parts:
            raise ValueError("a chat request needs at least one user part")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")

    @property
    def text(self) -> str:
        return "\n".join(p for p in self.user_parts if isinstance(p, str))

    @property
    def images(self) -> list[ImagePart]:
        return [p for p in self.user_parts if isinstance(p, ImagePart)]

    def request_tag(self, model_id: str) -> str:
        """Stable content hash of (model, system text, user parts, temperature)."""
        parts = [{"text": p} if isinstance(p, str) else {"image": p.digest()} for p in self.user_parts]
        blob = json.dumps(
            {"model": model_id, "system": self.system_text, "parts": parts, "temperature": float(self.temperature)},
            sort_keys=True, ensure_ascii=False, separators=(",", ":"),
        )
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def wire_body(self, model_id: str) -> dict:
        messages = []
        if self.system_text:
            messages.append({"role": "system", "content": self.system_text})
        content = []
        for p in self.user_parts:
            if isinstance(p, str):
                content.append({"type": "text", "text": p})
            else:
                content.append({"type": "image_url", "image_url": {"url": p.wire_url()}})
        messages.append({"role": "user", "content": content})
        return {
            "model": model_id,
            "messages": messages,
            "temperature": self.temperature,
            "max_tokens": self.max_output_tokens,
        }

    def with_appended_text(self, text: str) -> "ChatRequest":
        return ChatRequest(
            user_parts=self.user_parts + (text,),
            system_text=self.system_text,
            temperature=self.temperature,
            max_output_tokens=self.max_output_tokens,
            purpose=self.purpose,
        )


def request_digest(request: ChatRequest, model_id: str) -> str:
    body = json.dumps(request.wire_body(model_id), sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(body.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ChatResponse:
    text: str
    finish_reason: FinishReason = FinishReason.COMPLETE
    latency_ms: int = 0

    def __post_init__(self):
        if not self.text and self.finish_reason is not FinishReason.REFUSED:
            raise ValueError("empty response text is only valid for refusals")
        if self.latency_ms < 0:
            raise ValueError("latency must be non-negative")


@dataclass(frozen=True)
class BackendProfile:
    name: str
    model_id: str
    base_url: str = ""
    requests_per_minute: int = 60
    max_retries: int = 3
    mode: Mode = Mode.LIVE
    transcript: str | None = None  # replay source
    script: str | None = None  # script-mode rule file

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not self.name:
            raise ValueError("backend name must be non-empty")
        if self.requests_per_minute <= 0:
            raise ValueError("requests_per_minute must be positive")
        if not 0 <= self.max_retries <= 20:
            raise ValueError("max_retries must be in [0, 20]")
        if self.mode is Mode.LIVE and not self.base_url:
            raise ValueError("live backends need a base_url")

    @property
    def credential_env(self) -> str:
        return API_KEY_ENV_PREFIX + "".join(c if c.isalnum() else "_" for c in self.name).upper()


# --------------------------------------------------------------------------
# rate limiting

class RateLimiter:
    """Sliding-window limiter: at most ``per_minute`` acquisitions in any 60 s window.

    ``clock`` and ``sleep`` are injectable so tests can drive a simulated clock.
    """

    def __init__(self, per_minute: int, *, window_s: float = 60.0,
                 clock: Callable[[], float] = time.monotonic, sleep: Callable[[float], None] = time.sleep):
        if per_minute <= 0:
            raise ValueError("per_minute must be positive")
        self.per_minute = per_minute
        self.window_s = window_s
        self._clock = clock
        self._sleep = sleep
        self._issued: collections.deque[float] = collections.deque()
        self._lock = threading.Lock()

    def acquire(self) -> float:
        """Block until a slot is free; returns the issue time."""
        while True:
            with self._lock:
                now = self._clock()
                while self._issued and now - self._issued[0] >= self.window_s:
                    self._issued.popleft()
                if len(self._issued) < self.per_minute:
                    self._issued.append(now)
                    return now
                wait = self.window_s - (now - self._issued[0])
            self._sleep(max(wait, 0.0))


def backoff_delay(attempt: int, rng: random.Random) -> float:
    """Full-jitter exponential backoff for retry number ``attempt`` (0-based)."""
    ceiling = min(BACKOFF_CAP_S, BACKOFF_BASE_S * BACKOFF_FACTOR ** attempt)
    return rng.uniform(0.0, ceiling)


# --------------------------------------------------------------------------
# transcripts

def read_transcript(path: str | Path) -> dict[str, ChatResponse]:
    out: dict[str, ChatResponse] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                resp = obj["response"]
                out[obj["tag"]] = ChatResponse(resp["text"], FinishReason(resp["finish_reason"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad transcript line ({exc})") from exc
    return out


class TranscriptWriter:
    """Appends (tag, request digest, response) lines; one line per distinct tag."""

    def __init__(self, sink: str | Path):
        self.path = Path(sink)
        try:
            self._fh = self.path.open("a", encoding="utf-8")
        except OSError as exc:
            raise MllmError(f"cannot open transcript sink {sink}: {exc}") from exc
        self._lock = threading.Lock()
        self._seen: set[str] = set()

    def append(self, tag: str, digest: str, response: ChatResponse) -> None:
        line = json.dumps(
            {"tag": tag, "request_sha256": digest,
             "response": {"text": response.text, "finish_reason": response.finish_reason.value}},
            ensure_ascii=False, sort_keys=True,
        )
        with self._lock:
            if tag in self._seen:
                return
            self._seen.add(tag)
            self._fh.write(line + "\n")
            self._fh.flush()

    def close(self) -> None:
        with self._lock:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# --------------------------------------------------------------------------
# client

Responder = Callable[[ChatRequest], Union[str, ChatResponse]]


class ChatClient:
    """Backend client; safe for concurrent ``complete`` calls.

    live   -- HTTP POST to ``<base_url>/chat/completions``
    replay -- responses looked up by request tag in a recorded transcript
    script -- responses produced by ``responder`` (callable or sequence)
    """

    def __init__(
        self,
        backend: BackendProfile,
        *,
        transport: httpx.BaseTransport | None = None,
        responder: Responder | Sequence[Union[str, ChatResponse]] | None = None,
        replay: Mapping[str, ChatResponse] | None = None,
        api_key: str | None = None,
        recorder: TranscriptWriter | None = None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self.backend = backend
        self.recorder = recorder
        self.calls = 0
        self._count_lock = threading.Lock()
        self._sleep = sleep
        self._rng = rng or random.Random()
        self._rng_lock = threading.Lock()
        self._http: httpx.Client | None = None
        self._replay: Mapping[str, ChatResponse] | None = None
        self._responder: Responder | None = None

        mode = backend.mode
        if mode is Mode.LIVE:
            key = api_key if api_key is not None else os.environ.get(backend.credential_env)
            if not key:
                raise CredentialMissingError(
                    f"backend {backend.name!r}: set {backend.credential_env} to an API key")
            self._api_key = key
            self._limiter = RateLimiter(backend.requests_per_minute, clock=clock, sleep=sleep)
            self._http = httpx.Client(
                transport=transport,
                timeout=httpx.Timeout(READ_TIMEOUT_S, connect=CONNECT_TIMEOUT_S),
            )
        elif mode is Mode.REPLAY:
            if replay is None:
                if not backend.transcript:
                    raise MllmError(f"replay backend {backend.name!r} has no transcript")
                try:
                    replay = read_transcript(backend.transcript)
                except OSError as exc:
                    raise MllmError(f"cannot read transcript {backend.transcript}: {exc}") from exc
            self._replay = replay
        else:
            if responder is None:
                raise MllmError(f"script backend {backend.name!r} needs a responder")
            self._responder = responder if callable(responder) else _SequenceResponder(responder)

    def close(self) -> None:
        if self._http is not None:
            self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._count_lock:
            self.calls += 1
        mode = self.backend.mode
        if mode is Mode.REPLAY:
            tag = request.request_tag(self.backend.model_id)
            try:
                return self._replay[tag]
            except KeyError:
                raise ReplayKeyMissingError(tag) from None
        if mode is Mode.SCRIPT:
            out = self._responder(request)
            if isinstance(out, BaseException):
                raise out
            return out if isinstance(out, ChatResponse) else ChatResponse(str(out))
        response = self._complete_live(request)
        if self.recorder is not None:
            self.recorder.append(request.request_tag(self.backend.model_id),
                                 request_digest(request, self.backend.model_id), response)
        return response

    def _complete_live(self, request: ChatRequest) -> ChatResponse:
        url = self.backend.base_url.rstrip("/") + "/chat/completions"
        body = request.wire_body(self.backend.model_id)
        headers = {"Authorization": f"Bearer {self._api_key}", "Content-Type": "application/json"}
        last_status = None
        attempts = 0
        for attempt in range(self.backend.max_retries + 1):
            if attempt > 0:
                with self._rng_lock:
                    delay = backoff_delay(attempt - 1, self._rng)
                log.info("retrying %s after %.2fs (attempt %d)", self.backend.name, delay, attempt + 1)
                self._sleep(delay)
            self._limiter.acquire()
            attempts += 1
            t0 = time.perf_counter()
            try:
                resp = self._http.post(url, json=body, headers=headers)
            except httpx.TimeoutException as exc:
                last_status = None
                log.warning("%s: timeout (%s)", self.backend.name, exc)
                continue
            except httpx.TransportError as exc:
                last_status = None
                log.warning("%s: transport error (%s)", self.backend.name, exc)
                continue
            latency = int((time.perf_counter() - t0) * 1000)
            if resp.status_code in RETRYABLE_STATUS:
                last_status = resp.status_code
                log.warning("%s: HTTP %d", self.backend.name, resp.status_code)
                continue
            if resp.status_code >= 400:
                raise BackendHTTPError(f"{self.backend.name}: HTTP {resp.status_code}: {resp.text[:200]}",
                                       resp.status_code)
            return _parse_wire_response(resp, latency)
        raise RetriesExhaustedError(
            f"{self.backend.name}: gave up after {attempts} attempts", attempts, last_status)


def _parse_wire_response(resp: httpx.Response, latency_ms: int) -> ChatResponse:
    try:
        payload = resp.json()
        choice = payload["choices"][0]
        content = choice["message"].get("content") or ""
        if isinstance(content, list):  # some providers return content parts
            content = "".join(c.get("text", "") for c in content if isinstance(c, dict))
        finish = _WIRE_FINISH.get(choice.get("finish_reason") or "stop", FinishReason.COMPLETE)
    except (ValueError, KeyError, IndexError, TypeError, AttributeError) as exc:
        raise BackendHTTPError(f"unexpected response body: {exc}", resp.status_code) from exc
    if not content and finish is not FinishReason.REFUSED:
        finish = FinishReason.REFUSED
    return ChatResponse(content, finish, latency_ms)


class _SequenceResponder:
    def __init__(self, items: Iterable[Union[str, ChatResponse]]):
        self._items = list(items)
        self._i = 0
        self._lock = threading.Lock()

    def __call__(self, request: ChatRequest):
        with self._lock:
            if self._i >= len(self._items):
                raise ScriptExhaustedError("scripted response sequence exhausted")
            item = self._items[self._i]
            self._i += 1
        return item


@dataclass
class TranscriptRecorder:
    """Recording handle returned by :func:`record_transcript`; use like a client."""

    client: ChatClient
    writer: TranscriptWriter

    def complete(self, request: ChatRequest) -> ChatResponse:
        return self.client.complete(request)

    @property
    def calls(self) -> int:
        return self.client.calls

    def close(self) -> None:
        self.client.close()
        self.writer.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def record_transcript(backend: BackendProfile, sink: str | Path, **client_kwargs) -> TranscriptRecorder:
    """Open a live client that appends every exchange to ``sink`` as JSONL."""
    if backend.mode is not Mode.LIVE:
        raise MllmError("transcripts are recorded from live backends only")
    writer = TranscriptWriter(sink)
    try:
        client = ChatClient(backend, recorder=writer, **client_kwargs)
    except Exception:
        writer.close()
        raise
    return TranscriptRecorder(client, writer)


def complete(backend: BackendProfile, request: ChatRequest, **client_kwargs) -> ChatResponse:
    """One-shot convenience wrapper around :class:`ChatClient`."""
    with ChatClient(backend, **client_kwargs) as client:
        return client.complete(request)


# --------------------------------------------------------------------------
# rule-file responder for script mode driven from config files

@dataclass
class ScriptRule:
    response: str
    purpose: str | None = None
    contains: str | None = None

    def matches(self, request: ChatRequest) -> bool:
        if self.purpose is not None and request.purpose != self.purpose:
            return False
        if self.contains is not None and self.contains not in request.text:
            return False
        return True


@dataclass
class RuleResponder:
    """First matching rule wins; falls back to ``default`` if set.

    Rule file (JSON)::

        {"rules": [{"purpose": "event", "contains": "Trump", "response": "..."}],
         "default": "..."}
    """

    rules: list[ScriptRule] = field(default_factory=list)
    default: str | None = None

    def __call__(self, request: ChatRequest) -> str:
        for rule in self.rules:
            if rule.matches(request):
                return rule.response
        if self.default is None:
            raise ScriptExhaustedError(f"no script rule matches a {request.purpose or 'request'} call")
        return self.default

    @classmethod
    def from_file(cls, path: str | Path) -> "RuleResponder":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        rules = [ScriptRule(r["response"] if isinstance(r["response"], str) else json.dumps(r["response"]),
                            r.get("purpose"), r.get("contains"))
                 for r in obj.get("rules", [])]
        default = obj.get("default")
        if default is not None and not isinstance(default, str):
            default = json.dumps(default)
        return cls(rules, default)
