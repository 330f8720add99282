"""Run configuration: one JSON document, paths relative to its location.

Example::

    {
      "event": {"name": "2019 Ridgecrest", "epicenter": [35.766, -117.605],
                "country": "US", "start": "2019-07-04T00:00:00Z", "end": "2019-07-20T00:00:00Z"},
      "backend": "qwen",
      "backends": {
        "qwen": {"model_id": "qwen2.5-vl-72b", "base_url": "https://host/v1",
                 "requests_per_minute": 60, "max_retries": 3, "mode": "live",
                 "record": "transcripts/qwen.jsonl"}
      },
      "modality": "fusion", "prompt_version": "v1", "parallelism": 4
    }

Optional keys: ``gazetteer``, ``media_root``, ``term_libraries``,
``recheck_filter``, ``temperature``, ``max_output_tokens``, ``dyfi_columns``,
``max_join_km``, ``seed``, ``sample_size``, ``versions``.
Backend keys: ``model_id``, ``base_url``, ``requests_per_minute``,
``max_retries``, ``mode`` (live/replay/script), ``transcript`` (replay
source), ``record`` (live transcript sink), ``script`` (rule file) or
``responder`` ("module:function").
"""

from __future__ import annotations

import hashlib
import importlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping

from .assess import PipelineConfig
from .corpus import TermLibrary, bundled_libraries, load_term_library
from .geo import EventConfig, GeoPoint
from .mllm import BackendProfile, ChatClient, Mode, RuleResponder, TranscriptWriter
from .prompts import PROMPT_VERSIONS, Modality
from .validate import DEFAULT_MAX_JOIN_KM

DEFAULT_SAMPLE_SIZE = 50

_TOP_KEYS = {
    "event", "backend", "backends", "modality", "prompt_version", "parallelism", "gazetteer",
    "media_root", "term_libraries", "recheck_filter", "temperature", "max_output_tokens",
    "dyfi_columns", "max_join_km", "seed", "sample_size", "versions",
}
_BACKEND_KEYS = {
    "name", "model_id", "base_url", "requests_per_minute", "max_retries", "mode",
    "transcript", "record", "script", "responder",
}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))


@dataclass
class BackendSpec:
    profile: BackendProfile
    record: Path | None = None
    responder: str | None = None


@dataclass
class RunConfig:
    pipeline: PipelineConfig
    backend: BackendSpec
    digest: str
    path: Path | None = None
    dyfi_columns: dict[str, str] = field(default_factory=dict)
    max_join_km: float = DEFAULT_MAX_JOIN_KM
    seed: int = 0
    sample_size: int = DEFAULT_SAMPLE_SIZE
    versions: tuple[str, ...] = tuple(PROMPT_VERSIONS)


def parse_datetime(value: str) -> datetime:
    s = value.strip()
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def parse_point(value: Any) -> GeoPoint:
    if isinstance(value, str):
        value = [v for v in value.replace(" ", "").split(",") if v]
    if isinstance(value, Mapping):
        value = [value.get("lat"), value.get("lon")]
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ValueError(f"expected [lat, lon], got {value!r}")
    return GeoPoint(float(value[0]), float(value[1]))


def _check(problems: list[str], what: str, fn):
    try:
        return fn()
    except (ValueError, TypeError, KeyError) as exc:
        problems.append(f"{what}: {exc}")
        return None


def _rel(base: Path, p: str | None) -> Path | None:
    if p is None:
        return None
    q = Path(p)
    return q if q.is_absolute() else base / q


def build_config(
    raw: Mapping[str, Any], base_dir: str | Path = ".", overrides: Mapping[str, Any] | None = None,
    *, digest: str = "",
) -> RunConfig:
    """Validate a config mapping; every problem is reported in one ConfigError."""
    base = Path(base_dir)
    data = dict(raw)
    for k, v in (overrides or {}).items():
        if v is not None:
            data[k] = v
    problems: list[str] = []
    unknown = sorted(set(data) - _TOP_KEYS)
    if unknown:
        problems.append(f"unknown keys: {', '.join(unknown)}")

    # event
    event = None
    ev = data.get("event")
    if not isinstance(ev, Mapping):
        problems.append("event: required object with name and epicenter")
    else:
        def _event():
            return EventConfig(
                event_name=str(ev["name"]),
                epicenter=parse_point(ev["epicenter"]),
                country=ev.get("country"),
                start=parse_datetime(ev["start"]) if ev.get("start") else None,
                end=parse_datetime(ev["end"]) if ev.get("end") else None,
                region_label=ev.get("region_label"),
            )
        event = _check(problems, "event", _event)

    # backend
    spec = None
    backends = data.get("backends") or {}
    if isinstance(backends, list):
        backends = {b.get("name", ""): b for b in backends if isinstance(b, Mapping)}
    chosen = data.get("backend")
    if isinstance(chosen, Mapping):
        bdata, bname = dict(chosen), chosen.get("name", "")
    elif isinstance(chosen, str):
        bname = chosen
        bdata = backends.get(chosen)
        if bdata is None:
            problems.append(f"backend: {chosen!r} not among configured backends {sorted(backends)}")
    elif len(backends) == 1:
        bname, bdata = next(iter(backends.items()))
    else:
        bname, bdata = "", None
        problems.append("backend: name one of the configured backends")
    if bdata is not None:
        bad = sorted(set(bdata) - _BACKEND_KEYS)
        if bad:
            problems.append(f"backend {bname!r}: unknown keys {', '.join(bad)}")

        def _backend():
            mode = Mode(bdata.get("mode", "live"))
            transcript = _rel(base, bdata.get("transcript"))
            script = _rel(base, bdata.get("script"))
            if mode is Mode.REPLAY and transcript is None:
                raise ValueError("replay mode needs 'transcript'")
            if mode is Mode.REPLAY and not transcript.is_file():
                raise ValueError(f"transcript not found: {transcript}")
            if mode is Mode.SCRIPT and script is None and not bdata.get("responder"):
                raise ValueError("script mode needs 'script' or 'responder'")
            if script is not None and not script.is_file():
                raise ValueError(f"script rule file not found: {script}")
            profile = BackendProfile(
                name=bdata.get("name", bname),
                model_id=str(bdata["model_id"]),
                base_url=bdata.get("base_url", ""),
                requests_per_minute=int(bdata.get("requests_per_minute", 60)),
                max_retries=int(bdata.get("max_retries", 3)),
                mode=mode,
                transcript=None if transcript is None else str(transcript),
                script=None if script is None else str(script),
            )
            return BackendSpec(profile, _rel(base, bdata.get("record")), bdata.get("responder"))
        spec = _check(problems, f"backend {bname!r}", _backend)

    modality = _check(problems, "modality", lambda: Modality.parse(str(data.get("modality", "fusion"))))
    version = str(data.get("prompt_version", "v1"))
    if version not in PROMPT_VERSIONS:
        problems.append(f"prompt_version: {version!r} is not one of v1..v7")
    parallelism = data.get("parallelism", 1)
    if not isinstance(parallelism, int) or isinstance(parallelism, bool) or parallelism < 1:
        problems.append(f"parallelism: must be a positive integer, got {parallelism!r}")

    gazetteer = _rel(base, data.get("gazetteer"))
    if gazetteer is not None and not gazetteer.is_file():
        problems.append(f"gazetteer: file not found: {gazetteer}")
    media_root = _rel(base, data.get("media_root")) or base

    libraries: list[TermLibrary] = []
    term_paths = data.get("term_libraries")
    if term_paths is None:
        libraries = bundled_libraries()
    else:
        for tp in term_paths:
            lib = _check(problems, f"term_libraries {tp}", lambda tp=tp: load_term_library(_rel(base, tp)))
            if lib is not None:
                libraries.append(lib)

    max_join_km = data.get("max_join_km", DEFAULT_MAX_JOIN_KM)
    if not isinstance(max_join_km, (int, float)) or max_join_km <= 0:
        problems.append(f"max_join_km: must be positive, got {max_join_km!r}")
    sample_size = data.get("sample_size", DEFAULT_SAMPLE_SIZE)
    if not isinstance(sample_size, int) or sample_size < 1:
        problems.append(f"sample_size: must be a positive integer, got {sample_size!r}")
    versions = tuple(data.get("versions", PROMPT_VERSIONS))
    bad_versions = [v for v in versions if v not in PROMPT_VERSIONS]
    if bad_versions:
        problems.append(f"versions: unknown {bad_versions}")
    seed = data.get("seed", 0)
    if not isinstance(seed, int):
        problems.append(f"seed: must be an integer, got {seed!r}")
    dyfi_columns = data.get("dyfi_columns") or {}
    if not isinstance(dyfi_columns, Mapping):
        problems.append("dyfi_columns: must be an object")

    pipeline = None
    if not problems:
        pipeline = _check(problems, "pipeline", lambda: PipelineConfig(
            event=event,
            backend=spec.profile,
            modality=modality,
            prompt_version=version,
            parallelism=parallelism,
            gazetteer=gazetteer,
            recheck_filter=bool(data.get("recheck_filter", False)),
            libraries=libraries,
            media_root=media_root,
            temperature=float(data.get("temperature", 0.0)),
            max_output_tokens=int(data.get("max_output_tokens", 1024)),
        ))
    if problems:
        raise ConfigError(problems)
    return RunConfig(
        pipeline=pipeline,
        backend=spec,
        digest=digest,
        dyfi_columns=dict(dyfi_columns),
        max_join_km=float(max_join_km),
        seed=seed,
        sample_size=sample_size,
        versions=versions,
    )


def load_config(path: str | Path, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    path = Path(path)
    try:
        blob = path.read_bytes()
        raw = json.loads(blob.decode("utf-8"))
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from exc
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError([f"{path}: not valid JSON ({exc})"]) from exc
    if not isinstance(raw, Mapping):
        raise ConfigError([f"{path}: top level must be an object"])
    h = hashlib.sha256(blob)
    h.update(json.dumps({k: v for k, v in (overrides or {}).items() if v is not None},
                        sort_keys=True).encode())
    cfg = build_config(raw, path.parent, overrides, digest=h.hexdigest())
    cfg.path = path
    return cfg


def _import_responder(spec: str):
    mod_name, _, attr = spec.partition(":")
    if not attr:
        raise ValueError(f"responder must look like 'module:function', got {spec!r}")
    obj = getattr(importlib.import_module(mod_name), attr)
    return obj() if isinstance(obj, type) else obj


def make_client(spec: BackendSpec, **kw) -> tuple[ChatClient, TranscriptWriter | None]:
    """Client for a configured backend, plus the transcript sink if recording."""
    profile = spec.profile
    writer = None
    if profile.mode is Mode.SCRIPT:
        responder = (_import_responder(spec.responder) if spec.responder
                     else RuleResponder.from_file(profile.script))
        return ChatClient(profile, responder=responder, **kw), None
    if profile.mode is Mode.LIVE and spec.record is not None:
        spec.record.parent.mkdir(parents=True, exist_ok=True)
        writer = TranscriptWriter(spec.record)
    try:
        return ChatClient(profile, recorder=writer, **kw), writer
    except Exception:
        if writer is not None:
            writer.close()
        raise
