"""Per-tweet pipeline (locate -> verify event -> assess damage) and city aggregation."""

from __future__ import annotations

import json
import logging
import math
import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

from .corpus import TermLibrary, TermMatcher, TweetRecord
from .geo import (
    EventConfig,
    Gazetteer,
    GeoPoint,
    ResolvedLocation,
    Tier,
    haversine_km,
    resolve_tiered,
)
from .mllm import BackendProfile, ChatRequest, ChatResponse, MllmError
from .prompts import (
    REASK_SUFFIX,
    DamageVerdict,
    MissingImageError,
    Modality,
    ParseError,
    PromptVersion,
    event_request,
    get_version,
    location_request,
    parse_damage_response,
    parse_event_response,
    parse_location_response,
    render_damage_prompt,
)

log = logging.getLogger(__name__)

FLUSH_EVERY = 50

ASSESSMENT_KEYS = (
    "tweet_id", "location", "lat", "lon", "tier", "distance_km", "event_related",
    "human_impact", "damage_type", "damage_level", "confidence", "reasoning",
    "model", "modality", "prompt_version", "outcome",
)


class Outcome(str, Enum):
    ASSESSED = "assessed"
    NOT_EVENT = "not_event"
    UNRESOLVED_LOCATION = "unresolved_location"
    FILTERED_OUT = "filtered_out"
    PARSE_FAILED = "parse_failed"


class Client(Protocol):
    def complete(self, request: ChatRequest) -> ChatResponse: ...


@dataclass
class PipelineConfig:
    event: EventConfig
    backend: BackendProfile
    modality: Modality = Modality.FUSION
    prompt_version: PromptVersion | str = "v1"
    parallelism: int = 1
    gazetteer: Gazetteer | str | Path | None = None  # None -> bundled
    recheck_filter: bool = False
    libraries: Sequence[TermLibrary] = ()
    media_root: str | Path | None = None
    temperature: float = 0.0
    max_output_tokens: int = 1024
    flush_every: int = FLUSH_EVERY

    def __post_init__(self):
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if isinstance(self.modality, str):
            self.modality = Modality.parse(self.modality)
        self.prompt_version = get_version(self.prompt_version)
        if self.recheck_filter and not self.libraries:
            raise ValueError("recheck_filter needs term libraries")

    def load_gazetteer(self) -> Gazetteer:
        if isinstance(self.gazetteer, Gazetteer):
            return self.gazetteer
        if self.gazetteer is None:
            self.gazetteer = Gazetteer.bundled()
        else:
            self.gazetteer = Gazetteer.from_tsv(self.gazetteer)
        return self.gazetteer


@dataclass(frozen=True)
class AssessmentRecord:
    tweet_id: str
    resolved: ResolvedLocation
    outcome: Outcome
    model_name: str
    modality: str
    prompt_version: str
    event_related: str | None = None  # "Yes" | "No" | None when not reached
    verdict: DamageVerdict | None = None
    distance_km: float | None = None
    diagnostic: str | None = None

    def __post_init__(self):
        if (self.verdict is not None) != (self.outcome is Outcome.ASSESSED):
            raise ValueError("verdict is present iff outcome is assessed")
        if (self.distance_km is not None) != (self.resolved.point is not None):
            raise ValueError("distance_km is present iff the location has a point")

    @property
    def point(self) -> GeoPoint | None:
        return self.resolved.point

    def to_row(self) -> dict:
        v = self.verdict
        p = self.resolved.point
        row = {
            "tweet_id": self.tweet_id,
            "location": self.resolved.name or None,
            "lat": None if p is None else p.lat,
            "lon": None if p is None else p.lon,
            "tier": self.resolved.tier.value,
            "distance_km": self.distance_km,
            "event_related": self.event_related,
            "human_impact": None if v is None else v.human_impact,
            "damage_type": None if v is None else v.damage_type,
            "damage_level": None if v is None else v.damage_level,
            "confidence": None if v is None else v.confidence,
            "reasoning": None if v is None else v.reasoning,
            "model": self.model_name,
            "modality": self.modality,
            "prompt_version": self.prompt_version,
            "outcome": self.outcome.value,
        }
        assert tuple(row) == ASSESSMENT_KEYS
        return row

    def to_json(self) -> str:
        return json.dumps(self.to_row(), ensure_ascii=False)

    @classmethod
    def from_row(cls, row: dict) -> "AssessmentRecord":
        missing = [k for k in ASSESSMENT_KEYS if k not in row]
        if missing:
            raise ValueError(f"assessment row lacks keys {missing}")
        tier = Tier(row["tier"])
        point = None if row["lat"] is None else GeoPoint(float(row["lat"]), float(row["lon"]))
        resolved = (ResolvedLocation.unresolved() if tier is Tier.UNRESOLVED
                    else ResolvedLocation(row["location"] or "", point, tier))
        outcome = Outcome(row["outcome"])
        verdict = None
        if outcome is Outcome.ASSESSED:
            verdict = DamageVerdict(
                human_impact=int(row["human_impact"]),
                damage_type=row["damage_type"],
                damage_level=int(row["damage_level"]),
                confidence=float(row["confidence"]),
                reasoning=row["reasoning"] or "",
            )
        return cls(
            tweet_id=str(row["tweet_id"]),
            resolved=resolved,
            outcome=outcome,
            model_name=row["model"],
            modality=row["modality"],
            prompt_version=row["prompt_version"],
            event_related=row["event_related"],
            verdict=verdict,
            distance_km=None if row["distance_km"] is None else float(row["distance_km"]),
        )


class _StageFailure(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


def _ask(client: Client, request: ChatRequest, parse: Callable, stage: str):
    """Call the backend and parse; one re-ask on unparseable output."""
    try:
        raw = client.complete(request).text
        try:
            return parse(raw)
        except ParseError as first:
            log.debug("%s: re-asking after %s", stage, first)
            raw = client.complete(request.with_appended_text(REASK_SUFFIX)).text
            try:
                return parse(raw)
            except ParseError as second:
                raise _StageFailure(stage, f"unparseable output ({second})") from second
    except MllmError as exc:
        raise _StageFailure(stage, f"backend error ({exc})") from exc


class Assessor:
    """Holds the loaded gazetteer/matcher so batches share one setup."""

    def __init__(self, cfg: PipelineConfig, client: Client, *, damage_only: bool = False):
        self.cfg = cfg
        self.client = client
        # damage_only skips location and event stages (prompt-sensitivity runs)
        self.damage_only = damage_only
        self.gazetteer = cfg.load_gazetteer()
        self.matcher = TermMatcher(cfg.libraries) if cfg.recheck_filter else None

    def _record(self, rec: TweetRecord, resolved: ResolvedLocation, outcome: Outcome, **kw) -> AssessmentRecord:
        dist = None if resolved.point is None else haversine_km(resolved.point, self.cfg.event.epicenter)
        return AssessmentRecord(
            tweet_id=rec.id,
            resolved=resolved,
            outcome=outcome,
            model_name=self.cfg.backend.model_id,
            modality=self.cfg.modality.value,
            prompt_version=self.cfg.prompt_version.version_id,
            distance_km=dist,
            **kw,
        )

    def assess(self, rec: TweetRecord) -> AssessmentRecord:
        cfg = self.cfg
        unresolved = ResolvedLocation.unresolved()
        if self.matcher is not None and not self.matcher.matches(rec.text):
            return self._record(rec, unresolved, Outcome.FILTERED_OUT, diagnostic="no damage term")
        if not cfg.event.in_window(rec.created_at):
            return self._record(rec, unresolved, Outcome.FILTERED_OUT, diagnostic="outside event window")

        try:
            damage_req = render_damage_prompt(
                rec, cfg.modality, cfg.prompt_version, media_root=cfg.media_root,
                temperature=cfg.temperature, max_output_tokens=cfg.max_output_tokens,
            )
        except MissingImageError as exc:
            return self._record(rec, unresolved, Outcome.PARSE_FAILED, diagnostic=f"damage: {exc}")

        if self.damage_only:
            try:
                verdict = _ask(self.client, damage_req, parse_damage_response, "damage")
            except _StageFailure as exc:
                return self._record(rec, unresolved, Outcome.PARSE_FAILED, diagnostic=str(exc))
            return self._record(rec, unresolved, Outcome.ASSESSED, verdict=verdict)

        kw = dict(temperature=cfg.temperature, max_output_tokens=cfg.max_output_tokens)
        resolved = unresolved
        try:
            content_name = None
            if rec.geotag is None:
                loc = _ask(self.client, location_request(rec, cfg.event, **kw), parse_location_response, "location")
                content_name = loc.location
            resolved = resolve_tiered(rec, content_name, self.gazetteer, cfg.event.country)
            if resolved.tier is Tier.UNRESOLVED:
                return self._record(rec, resolved, Outcome.UNRESOLVED_LOCATION)

            ev = _ask(self.client, event_request(rec, cfg.event, **kw), parse_event_response, "event")
            if not ev.related:
                return self._record(rec, resolved, Outcome.NOT_EVENT, event_related="No")

            verdict = _ask(self.client, damage_req, parse_damage_response, "damage")
        except _StageFailure as exc:
            log.info("tweet %s: %s", rec.id, exc)
            event_related = "Yes" if exc.stage == "damage" else None
            return self._record(rec, resolved, Outcome.PARSE_FAILED,
                                event_related=event_related, diagnostic=str(exc))
        return self._record(rec, resolved, Outcome.ASSESSED, event_related="Yes", verdict=verdict)


def assess_tweet(record: TweetRecord, cfg: PipelineConfig, client: Client) -> AssessmentRecord:
    return Assessor(cfg, client).assess(record)


def outcome_counts(records: Iterable[AssessmentRecord]) -> dict[str, int]:
    c = Counter(r.outcome.value for r in records)
    return {o.value: c.get(o.value, 0) for o in Outcome}


def assess_batch(
    corpus: Sequence[TweetRecord],
    cfg: PipelineConfig,
    client: Client,
    *,
    out_path: str | Path | None = None,
    diagnostics_path: str | Path | None = None,
    progress: Callable[[int, int], None] | None = None,
    damage_only: bool = False,
) -> list[AssessmentRecord]:
    """Assess every record, fanning out to ``cfg.parallelism`` workers.

    Results come back in input order. With ``out_path`` the JSONL is written
    incrementally: each time ``cfg.flush_every`` further in-order rows are
    ready they are appended and flushed.
    """
    assessor = Assessor(cfg, client, damage_only=damage_only)
    n = len(corpus)
    results: list[AssessmentRecord | None] = [None] * n
    out_fh = open(out_path, "w", encoding="utf-8") if out_path is not None else None
    diag_fh = open(diagnostics_path, "w", encoding="utf-8") if diagnostics_path is not None else None
    written = 0
    pending: list[str] = []
    lock = threading.Lock()

    def _drain(final: bool = False):
        nonlocal written
        while written < n and results[written] is not None:
            rec = results[written]
            pending.append(rec.to_json())
            if diag_fh is not None and rec.diagnostic:
                diag_fh.write(json.dumps({"tweet_id": rec.tweet_id, "outcome": rec.outcome.value,
                                          "diagnostic": rec.diagnostic}, ensure_ascii=False) + "\n")
            written += 1
        if out_fh is not None and pending and (final or len(pending) >= cfg.flush_every):
            out_fh.write("".join(line + "\n" for line in pending))
            out_fh.flush()
            pending.clear()
        elif out_fh is None:
            pending.clear()

    done = 0
    try:
        if cfg.parallelism == 1 or n <= 1:
            for i, rec in enumerate(corpus):
                results[i] = assessor.assess(rec)
                done += 1
                _drain()
                if progress:
                    progress(done, n)
        else:
            with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
                futures = {pool.submit(assessor.assess, rec): i for i, rec in enumerate(corpus)}
                for fut in as_completed(futures):
                    with lock:
                        results[futures[fut]] = fut.result()
                        done += 1
                        _drain()
                    if progress:
                        progress(done, n)
        _drain(final=True)
    finally:
        if out_fh is not None:
            out_fh.close()
        if diag_fh is not None:
            diag_fh.close()
    counts = outcome_counts(results)
    log.info("assessed %d records: %s", n, ", ".join(f"{k}={v}" for k, v in counts.items()))
    return results  # type: ignore[return-value]


def write_assessments(records: Iterable[AssessmentRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def read_assessments(path: str | Path) -> list[AssessmentRecord]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(AssessmentRecord.from_row(json.loads(line)))
                except (ValueError, KeyError, TypeError) as exc:
                    raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return out


# --------------------------------------------------------------------------
# aggregation

@dataclass(frozen=True)
class CityAggregate:
    city_name: str
    point: GeoPoint
    n: int
    mean_mmi: float
    mean_confidence: float
    qualifier: str = ""
    n_exterior: int = 0


def normalize_city_name(name: str) -> tuple[str, str]:
    """Split ``"el monte,  CA"`` into (``"El Monte"``, ``"CA"``)."""
    name = " ".join(name.split())
    city, _, qualifier = name.partition(",")
    city, qualifier = city.strip(), " ".join(qualifier.split())
    latin = all(ord(c) < 0x250 for c in city)
    if latin and (city.islower() or city.isupper()):
        city = " ".join(w[:1].upper() + w[1:].lower() for w in city.split(" "))
    return city, qualifier


def aggregate_by_city(records: Iterable[AssessmentRecord]) -> list[CityAggregate]:
    """Mean MMI per resolved city over assessed records with a point.

    Level 0 counts as MMI 1. Sums use ``math.fsum`` so the result does not
    depend on record order.
    """
    groups: dict[str, list[AssessmentRecord]] = {}
    quals: dict[str, set[str]] = {}
    for r in records:
        if r.outcome is not Outcome.ASSESSED or r.point is None or not r.resolved.name:
            continue
        city, qual = normalize_city_name(r.resolved.name)
        if not city:
            continue
        groups.setdefault(city, []).append(r)
        if qual:
            quals.setdefault(city, set()).add(qual)
    out = []
    for city in sorted(groups):
        members = groups[city]
        n = len(members)
        lat = math.fsum(m.point.lat for m in members) / n
        lon = math.fsum(m.point.lon for m in members) / n
        out.append(CityAggregate(
            city_name=city,
            point=GeoPoint(min(90.0, max(-90.0, lat)), min(180.0, max(-180.0, lon))),
            n=n,
            mean_mmi=math.fsum(m.verdict.mmi for m in members) / n,
            mean_confidence=math.fsum(m.verdict.confidence for m in members) / n,
            qualifier=",".join(sorted(quals.get(city, ()))),
            n_exterior=sum(m.verdict.damage_type in ("Exterior", "Both") for m in members),
        ))
    return out


def to_geojson(records: Iterable[AssessmentRecord]) -> dict:
    """Point FeatureCollection of assessed records, ``mmi`` per feature."""
    feats = []
    for r in records:
        if r.outcome is not Outcome.ASSESSED or r.point is None:
            continue
        feats.append({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [r.point.lon, r.point.lat]},
            "properties": {
                "tweet_id": r.tweet_id,
                "location": r.resolved.name or None,
                "tier": r.resolved.tier.value,
                "mmi": r.verdict.mmi,
                "damage_level": r.verdict.damage_level,
                "damage_type": r.verdict.damage_type,
                "human_impact": r.verdict.human_impact,
                "confidence": r.verdict.confidence,
                "distance_km": r.distance_km,
                "model": r.model_name,
            },
        })
    return {"type": "FeatureCollection", "features": feats}
