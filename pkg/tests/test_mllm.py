import base64
import json
import random

import httpx
import pytest

from quake3m.mllm import (
    BACKOFF_CAP_S,
    BackendHTTPError,
    BackendProfile,
    ChatClient,
    ChatRequest,
    ChatResponse,
    CredentialMissingError,
    FinishReason,
    ImagePart,
    ImageTooLargeError,
    Mode,
    RateLimiter,
    ReplayKeyMissingError,
    RetriesExhaustedError,
    RuleResponder,
    ScriptExhaustedError,
    backoff_delay,
    read_transcript,
    record_transcript,
)

LIVE = BackendProfile("gemini", "gemini-1.5-pro", base_url="https://llm.example/v1", max_retries=3)


def _ok(text="hello", finish="stop"):
    return httpx.Response(200, json={"choices": [{"message": {"content": text}, "finish_reason": finish}]})


class FakeClock:
    def __init__(self):
        self.t = 0.0
        self.sleeps = []

    def __call__(self):
        return self.t

    def sleep(self, s):
        self.sleeps.append(s)
        self.t += s


def _client(handler, backend=LIVE, **kw):
    clock = FakeClock()
    c = ChatClient(backend, transport=httpx.MockTransport(handler), api_key="k", clock=clock,
                   sleep=clock.sleep, rng=random.Random(0), **kw)
    return c, clock


def test_credential_env_name():
    assert LIVE.credential_env == "QUAKE3M_API_KEY_GEMINI"
    assert BackendProfile("my-qwen", "m", base_url="x").credential_env == "QUAKE3M_API_KEY_MY_QWEN"


def test_missing_credential(monkeypatch):
    monkeypatch.delenv("QUAKE3M_API_KEY_GEMINI", raising=False)
    with pytest.raises(CredentialMissingError, match="QUAKE3M_API_KEY_GEMINI"):
        ChatClient(LIVE)


def test_credential_from_env(monkeypatch):
    monkeypatch.setenv("QUAKE3M_API_KEY_GEMINI", "secret")
    seen = {}

    def handler(req):
        seen["auth"] = req.headers["authorization"]
        return _ok()

    with ChatClient(LIVE, transport=httpx.MockTransport(handler)) as c:
        c.complete(ChatRequest(("hi",)))
    assert seen["auth"] == "Bearer secret"


def test_wire_body_with_image():
    img = ImagePart("window.png", b"\x89PNGdata", "image/png")
    req = ChatRequest(("describe", img), temperature=0)
    body = req.wire_body("m")
    parts = body["messages"][0]["content"]
    assert parts[0] == {"type": "text", "text": "describe"}
    url = parts[1]["image_url"]["url"]
    assert url.startswith("data:image/png;base64,")
    assert base64.b64decode(url.split(",", 1)[1]) == b"\x89PNGdata"
    assert body["max_tokens"] == 1024 and body["temperature"] == 0


def test_remote_image_passes_url():
    assert ImagePart.load("https://x/y.jpg").wire_url() == "https://x/y.jpg"


def test_image_size_cap():
    with pytest.raises(ImageTooLargeError):
        ImagePart("big.jpg", b"\0" * (7 * 1024 * 1024))


def test_request_tag_stability():
    a = ChatRequest(("x",), purpose="event")
    b = ChatRequest(("x",), purpose="damage")
    assert a.request_tag("m") == b.request_tag("m")
    assert a.request_tag("m") != a.request_tag("m2")
    assert a.request_tag("m") != ChatRequest(("x",), temperature=0.5).request_tag("m")
    assert len(a.request_tag("m")) == 64


def test_retry_walk_429_429_200():
    statuses = iter([429, 429, 200])
    calls = []

    def handler(req):
        calls.append(json.loads(req.content))
        s = next(statuses)
        return _ok("done") if s == 200 else httpx.Response(s)

    c, clock = _client(handler)
    resp = c.complete(ChatRequest(("x",)))
    assert resp.text == "done" and resp.finish_reason is FinishReason.COMPLETE
    assert len(calls) == 3
    assert len(clock.sleeps) == 2
    assert 0 <= clock.sleeps[0] <= 1.0 and 0 <= clock.sleeps[1] <= 2.0


def test_retries_exhausted():
    c, clock = _client(lambda req: httpx.Response(503))
    with pytest.raises(RetriesExhaustedError) as ei:
        c.complete(ChatRequest(("x",)))
    assert ei.value.attempts == 4 and ei.value.last_status == 503


def test_transport_error_is_retried():
    n = {"i": 0}

    def handler(req):
        n["i"] += 1
        if n["i"] == 1:
            raise httpx.ConnectError("boom")
        return _ok()

    c, _ = _client(handler)
    assert c.complete(ChatRequest(("x",))).text == "hello"


def test_client_error_not_retried():
    n = {"i": 0}

    def handler(req):
        n["i"] += 1
        return httpx.Response(400, text="bad request")

    c, _ = _client(handler)
    with pytest.raises(BackendHTTPError) as ei:
        c.complete(ChatRequest(("x",)))
    assert n["i"] == 1 and ei.value.status == 400


@pytest.mark.parametrize("wire,ours", [
    ("stop", FinishReason.COMPLETE),
    ("length", FinishReason.TRUNCATED),
    ("content_filter", FinishReason.REFUSED),
])
def test_finish_reason_mapping(wire, ours):
    c, _ = _client(lambda req: _ok("t", wire))
    assert c.complete(ChatRequest(("x",))).finish_reason is ours


def test_empty_content_is_refusal():
    c, _ = _client(lambda req: _ok(""))
    assert c.complete(ChatRequest(("x",))).finish_reason is FinishReason.REFUSED


def test_backoff_bounds():
    rng = random.Random(1)
    for attempt in range(12):
        for _ in range(50):
            d = backoff_delay(attempt, rng)
            assert 0 <= d <= min(BACKOFF_CAP_S, 2 ** attempt)


def test_rate_limiter_sliding_window():
    clock = FakeClock()
    lim = RateLimiter(10, clock=clock, sleep=clock.sleep)
    times = [lim.acquire() for _ in range(35)]
    for i, t in enumerate(times):
        in_window = [u for u in times if t - 60 < u <= t]
        assert len(in_window) <= 10, i
    assert times[10] >= 60.0
    assert times[-1] >= 180.0


def test_live_client_respects_rpm():
    backend = BackendProfile("b", "m", base_url="https://x", requests_per_minute=5)
    c, clock = _client(lambda req: _ok(), backend=backend)
    stamps = []
    for _ in range(12):
        c.complete(ChatRequest(("x",)))
        stamps.append(clock.t)
    for t in stamps:
        assert sum(1 for u in stamps if t - 60 < u <= t) <= 5


def test_record_then_replay(tmp_path):
    sink = tmp_path / "t.jsonl"

    def handler(req):
        text = json.loads(req.content)["messages"][0]["content"][0]["text"]
        return _ok(f"echo {text}")

    reqs = [ChatRequest((f"q{i}",)) for i in range(5)]
    with record_transcript(LIVE, sink, transport=httpx.MockTransport(handler), api_key="k") as rec:
        live = [rec.complete(r) for r in reqs]
        rec.complete(reqs[0])  # repeated tag is stored once
    lines = sink.read_text().splitlines()
    assert len(lines) == 5
    row = json.loads(lines[0])
    assert set(row) == {"tag", "request_sha256", "response"}

    replay_backend = BackendProfile("gemini", "gemini-1.5-pro", mode=Mode.REPLAY, transcript=str(sink))
    c = ChatClient(replay_backend)
    assert [c.complete(r).text for r in reqs] == [r.text for r in live]
    with pytest.raises(ReplayKeyMissingError):
        c.complete(ChatRequest(("never recorded",)))


def test_replay_never_touches_network(tmp_path):
    sink = tmp_path / "t.jsonl"
    sink.write_text("", encoding="utf-8")

    def forbid(req):
        raise AssertionError("network access in replay mode")

    c = ChatClient(BackendProfile("b", "m", mode=Mode.REPLAY, transcript=str(sink)),
                   transport=httpx.MockTransport(forbid))
    with pytest.raises(ReplayKeyMissingError):
        c.complete(ChatRequest(("x",)))


def test_read_transcript_rejects_garbage(tmp_path):
    p = tmp_path / "t.jsonl"
    p.write_text("{}\n", encoding="utf-8")
    with pytest.raises(ValueError):
        read_transcript(p)


def test_script_sequence_and_exhaustion():
    c = ChatClient(BackendProfile("s", "m", mode=Mode.SCRIPT), responder=["a", ChatResponse("b")])
    assert [c.complete(ChatRequest(("x",))).text for _ in range(2)] == ["a", "b"]
    with pytest.raises(ScriptExhaustedError):
        c.complete(ChatRequest(("x",)))
    assert c.calls == 3


def test_script_responder_exception_is_raised():
    err = RetriesExhaustedError("gave up", 4, 503)
    c = ChatClient(BackendProfile("s", "m", mode=Mode.SCRIPT), responder=lambda r: err)
    with pytest.raises(RetriesExhaustedError):
        c.complete(ChatRequest(("x",)))


def test_rule_responder_file(tmp_path):
    p = tmp_path / "rules.json"
    p.write_text(json.dumps({
        "rules": [{"purpose": "event", "response": {"is_event_related": "No"}},
                  {"contains": "Pasadena", "response": "Pasadena!"}],
        "default": "fallback",
    }), encoding="utf-8")
    r = RuleResponder.from_file(p)
    assert json.loads(r(ChatRequest(("x",), purpose="event"))) == {"is_event_related": "No"}
    assert r(ChatRequest(("in Pasadena",))) == "Pasadena!"
    assert r(ChatRequest(("other",))) == "fallback"


def test_backend_profile_validation():
    with pytest.raises(ValueError):
        BackendProfile("b", "m")  # live without base_url
    with pytest.raises(ValueError):
        BackendProfile("b", "m", base_url="x", requests_per_minute=0)
