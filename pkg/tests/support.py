"""Synthetic corpora, planted DYFI fields and scripted responders for tests."""

from __future__ import annotations

import json
import math
import random
import re
from pathlib import Path

from quake3m.corpus import TweetRecord, detect_script
from quake3m.geo import EventConfig, Gazetteer, GeoPoint, Granularity, haversine_km
from quake3m.mllm import BackendProfile, ChatClient, ChatRequest, Mode
from quake3m.validate import DyfiRecord

FIXTURES = Path(__file__).parent / "fixtures"
RIDGECREST = GeoPoint(35.766, -117.605)
EVENT = EventConfig("2019 Ridgecrest", RIDGECREST, country="US")
SCRIPT_BACKEND = BackendProfile("mock", "mock-model", mode=Mode.SCRIPT)

_TAG_RE = re.compile(r"\[(t\d+)\]")


def planted_mmi(d_km: float) -> int:
    return min(9, max(1, round(9 - 2 * math.log(1 + d_km / 10))))


def planted_cdi(d_km: float) -> float:
    return min(9.0, max(1.0, 9 - 2 * math.log(1 + d_km / 10)))


def damage_json(level: int, dtype: str = "Exterior", impact: int = 1, conf: float = 0.9,
                reasoning: str = "walls cracked") -> str:
    return json.dumps({"human_impact": impact, "damage_type": dtype, "damage_level": level,
                       "reasoning": reasoning, "confidence": conf})


def tweet_id(request: ChatRequest) -> str:
    m = _TAG_RE.search(request.text)
    assert m, "synthetic tweets carry a [tNNNN] tag"
    return m.group(1)


def record(tid: str, text: str, geotag=None, profile=None, media=()) -> TweetRecord:
    from quake3m.corpus import MediaRef

    return TweetRecord(
        id=tid, text=text, created_at=None, geotag=geotag, profile_location=profile,
        media=tuple(MediaRef.from_uri(m) for m in media), script_hint=detect_script(text),
    )


def cities_by_band(gaz: Gazetteer, epicenter: GeoPoint, band_km: float = 50, max_km: float = 350):
    bands: dict[int, list] = {}
    for e in gaz.entries:
        if e.granularity is Granularity.CITY and e.country == "US":
            d = haversine_km(epicenter, e.point)
            if d < max_km:
                bands.setdefault(int(d // band_km), []).append(e)
    for v in bands.values():
        v.sort(key=lambda e: e.name)
    return [bands[k] for k in sorted(bands)]


def jitter(rng: random.Random, p: GeoPoint, km: float) -> GeoPoint:
    r = km * math.sqrt(rng.random())
    theta = rng.uniform(0, 2 * math.pi)
    dlat = r * math.cos(theta) / 111.2
    dlon = r * math.sin(theta) / (111.2 * math.cos(math.radians(p.lat)))
    return GeoPoint(p.lat + dlat, p.lon + dlon)


NEAR_FIELD_SHARE = 0.5
CITIES_PER_BAND = 5


def synthetic_field(n: int = 500, seed: int = 7, gaz: Gazetteer | None = None):
    """Geotagged tweets near gazetteer cities plus a DYFI file from the same field.

    Half the tweets come from towns within 50 km of the epicenter; the rest
    spread evenly over the outer 50 km bands (five towns per band). Tweet
    level attenuation r depends on this geometry: with distances spread
    uniformly it sits near -0.80 under +-1 noise.
    """
    gaz = gaz or Gazetteer.bundled()
    rng = random.Random(seed)
    bands = cities_by_band(gaz, RIDGECREST)
    chosen = [b[:: max(1, len(b) // CITIES_PER_BAND)][:CITIES_PER_BAND] for b in bands]
    outer = (1 - NEAR_FIELD_SHARE) / (len(chosen) - 1)
    weights = [NEAR_FIELD_SHARE] + [outer] * (len(chosen) - 1)
    tweets, truth = [], {}
    for i in range(n):
        band = chosen[rng.choices(range(len(chosen)), weights)[0]]
        p = jitter(rng, rng.choice(band).point, 1.5)
        tid = f"t{i:04d}"
        tweets.append(record(tid, f"[{tid}] felt the quake, some damage here", geotag=(p.lat, p.lon)))
        truth[tid] = planted_mmi(haversine_km(p, RIDGECREST))
    dyfi = [DyfiRecord(e.name, planted_cdi(haversine_km(e.point, RIDGECREST)), 5, e.point)
            for band in bands for e in band]
    return tweets, truth, dyfi


class PlantedResponder:
    """Answers by request purpose; damage level = planted truth + seeded noise.

    Noise is derived from (seed, tweet id) so it does not depend on call order.
    """

    def __init__(self, truth: dict[str, int], *, noise: int = 1, seed: int = 0,
                 locations: dict[str, str] | None = None, events: dict[str, str] | None = None,
                 broken: set[str] = frozenset(), dtype: str = "Exterior"):
        self.truth = truth
        self.noise = noise
        self.seed = seed
        self.locations = locations or {}
        self.events = events or {}
        self.broken = set(broken)
        self.dtype = dtype

    def __call__(self, request: ChatRequest) -> str:
        tid = tweet_id(request)
        if request.purpose == "location":
            loc = self.locations.get(tid, "No")
            return json.dumps({"location": loc})
        if request.purpose == "event":
            return json.dumps({"is_event_related": self.events.get(tid, "Yes"), "reasoning": "mentions the quake"})
        if tid in self.broken:
            return "I cannot determine this."
        jit = random.Random(f"{self.seed}:{tid}").randint(-self.noise, self.noise) if self.noise else 0
        level = min(10, max(0, self.truth.get(tid, 4) + jit))
        return damage_json(level, self.dtype, reasoning=f"level {level} damage cracked walls")


def script_client(responder, backend: BackendProfile = SCRIPT_BACKEND) -> ChatClient:
    return ChatClient(backend, responder=responder)


def load_mock100():
    from quake3m.corpus import load_corpus

    corpus = load_corpus(FIXTURES / "mock_100.jsonl").records
    truth = json.loads((FIXTURES / "mock_100.truth.json").read_text(encoding="utf-8"))
    return corpus, truth


def mock100_responder(**kw) -> PlantedResponder:
    """Responder matching mock_100.jsonl; importable as ``support:mock100_responder``."""
    _, truth = load_mock100()
    return PlantedResponder(truth["levels"], locations=truth["locations"], events=truth["events"],
                            broken=set(truth["broken"]), **kw)


_MOCK100: PlantedResponder | None = None


def mock100(request: ChatRequest) -> str:
    """Script responder for mock_100.jsonl; configs name it ``support:mock100``."""
    global _MOCK100
    if _MOCK100 is None:
        _MOCK100 = mock100_responder()
    return _MOCK100(request)


def constant_damage(request: ChatRequest) -> str:
    return damage_json(4, "Exterior", conf=0.7, reasoning="cracked plaster")


def version_of(request: ChatRequest) -> str:
    from quake3m.prompts import PROMPT_VERSIONS, Modality, get_version

    for v in PROMPT_VERSIONS:
        head = get_version(v).text_for(Modality.TEXT_ONLY).split("{", 1)[0][:60]
        if request.text.startswith(head):
            return v
    raise AssertionError("request does not match any prompt version")


class VersionTableResponder:
    """Damage type chosen per (version, tweet) so the version x type table is planted.

    ``plan`` maps version -> ordered list of damage types; the i-th tweet seen
    for a version (by tag order in ``ids``) gets the i-th type.
    """

    def __init__(self, plan: dict[str, list[str]], ids: list[str], level: int = 4):
        self.plan = plan
        self.index = {tid: i for i, tid in enumerate(ids)}
        self.level = level

    def __call__(self, request: ChatRequest) -> str:
        dtype = self.plan[version_of(request)][self.index[tweet_id(request)]]
        return damage_json(self.level, dtype)


def planted_table_corpus():
    ids = [f"t{i:04d}" for i in range(10)]
    corpus = [record(t, f"[{t}] the quake cracked the walls") for t in ids]
    plan = {"v1": ["Interior"] * 6 + ["Exterior"] * 4, "v2": ["Interior"] * 4 + ["Exterior"] * 6}
    return corpus, VersionTableResponder(plan, ids)


def table_responder(request: ChatRequest) -> str:
    """Module-level form of the planted [[6,4],[4,6]] responder for CLI configs."""
    return planted_table_corpus()[1](request)


def wire_handler(responder):
    """httpx handler that answers chat-completion bodies with a purpose-aware responder."""
    import httpx

    from quake3m import templates

    heads = {"location": templates.LOCATION_PROMPT.split("{", 1)[0],
             "event": templates.EVENT_PROMPT.split("{", 1)[0]}

    def handler(req):
        body = json.loads(req.content)
        parts = body["messages"][0]["content"]
        text = "".join(p["text"] for p in parts if p["type"] == "text")
        purpose = next((k for k, h in heads.items() if text.startswith(h)), "damage")
        reply = responder(ChatRequest((text,), purpose=purpose))
        return httpx.Response(200, json={"choices": [{"message": {"content": reply}, "finish_reason": "stop"}]})

    return handler
