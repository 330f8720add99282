"""``quake3m`` command line: filter, assess, validate, sensitivity.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 backend error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import random
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from . import __version__
from .assess import (
    aggregate_by_city,
    assess_batch,
    outcome_counts,
    read_assessments,
    to_geojson,
)
from .config import ConfigError, RunConfig, load_config, make_client, parse_point
from .corpus import CorpusError, bundled_libraries, filter_damage_related, load_corpus, load_term_library, write_corpus
from .mllm import MllmError
from .validate import (
    DEFAULT_MAX_JOIN_KM,
    ValidationError,
    load_dyfi,
    prompt_sensitivity,
    validate_assessments,
)

log = logging.getLogger("quake3m")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BACKEND = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# manifest and output helpers

@dataclass
class RunManifest:
    command: str
    config_digest: str | None
    corpus_digest: str | None
    backend: dict | None
    started_at: str
    finished_at: str = ""
    outputs: list[str] = field(default_factory=list)
    counts: dict = field(default_factory=dict)
    version: str = __version__


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _write_manifest(out: Path, manifest: RunManifest) -> None:
    manifest.finished_at = _now()
    write_atomic(out / "manifest.json", json.dumps(asdict(manifest), indent=2, ensure_ascii=False) + "\n")


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _backend_info(cfg: RunConfig) -> dict:
    p = cfg.backend.profile
    return {"name": p.name, "model_id": p.model_id, "mode": p.mode.value}


def _load_records(args):
    loaded = load_corpus(args.corpus, args.format)
    for lineno, why in loaded.malformed:
        log.warning("%s:%d skipped: %s", args.corpus, lineno, why)
    return loaded


def _overrides(args) -> dict:
    ov = {}
    for key in ("backend", "modality", "prompt_version", "parallelism", "seed", "sample_size"):
        if getattr(args, key, None) is not None:
            ov[key] = getattr(args, key)
    if getattr(args, "versions", None):
        ov["versions"] = args.versions
    if getattr(args, "max_join_km", None) is not None:
        ov["max_join_km"] = args.max_join_km
    return ov


def _progress(done: int, total: int) -> None:
    if done == total or done % 50 == 0:
        log.info("progress %d/%d", done, total)


# --------------------------------------------------------------------------
# commands

def cmd_filter(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    libs = [load_term_library(p) for p in args.terms] if args.terms else bundled_libraries()
    loaded = _load_records(args)
    kept = filter_damage_related(loaded.records, libs, require_keywords=args.keywords or None)
    write_corpus(kept, out / "filtered.jsonl")
    counts = {"read": len(loaded.records), "retained": len(kept),
              "dropped": len(loaded.records) - len(kept), "malformed": len(loaded.malformed)}
    print(f"retained {counts['retained']} of {counts['read']} records "
          f"(dropped {counts['dropped']}, malformed {counts['malformed']})")
    _write_manifest(out, RunManifest("filter", None, file_digest(args.corpus), None, started,
                                     outputs=["filtered.jsonl"], counts=counts))
    return EXIT_OK


def cmd_assess(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    loaded = _load_records(args)
    client, writer = make_client(cfg.backend)
    try:
        records = assess_batch(
            loaded.records, cfg.pipeline, client,
            out_path=out / "assessments.jsonl",
            diagnostics_path=out / "diagnostics.jsonl",
            progress=_progress,
        )
    finally:
        client.close()
        if writer is not None:
            writer.close()
    write_atomic(out / "assessments.geojson", json.dumps(to_geojson(records), ensure_ascii=False) + "\n")
    cities = aggregate_by_city(records)
    _write_csv(out / "cities.csv", ("city", "qualifier", "lat", "lon", "n", "mean_mmi", "mean_confidence"),
               ((c.city_name, c.qualifier, repr(c.point.lat), repr(c.point.lon), c.n,
                 repr(c.mean_mmi), repr(c.mean_confidence)) for c in cities))
    counts = outcome_counts(records)
    counts["total"] = len(records)
    counts["model_calls"] = client.calls
    print(" ".join(f"{k}={v}" for k, v in counts.items()))
    _write_manifest(out, RunManifest(
        "assess", cfg.digest, file_digest(args.corpus), _backend_info(cfg), started,
        outputs=["assessments.jsonl", "assessments.geojson", "diagnostics.jsonl", "cities.csv"],
        counts=counts,
    ))
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = load_config(args.config) if args.config else None
    if args.epicenter:
        try:
            epicenter = parse_point(args.epicenter)
        except ValueError as exc:
            raise UsageError(f"--epicenter: {exc}") from exc
    elif cfg is not None:
        epicenter = cfg.pipeline.event.epicenter
    else:
        raise UsageError("validate needs --epicenter or --config")
    max_km = args.max_join_km or (cfg.max_join_km if cfg else DEFAULT_MAX_JOIN_KM)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    try:
        records = read_assessments(args.assessments)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    dyfi = load_dyfi(args.dyfi, cfg.dyfi_columns if cfg else None)
    report = validate_assessments(records, dyfi, epicenter, max_km, args.weight_nresp, top_k=args.top_k)
    (out / "validation.json").write_text(report.to_json(), encoding="utf-8")
    (out / "validation.txt").write_text(report.to_text(), encoding="utf-8")
    _write_csv(out / "joined.csv", ("city", "mean_mmi", "cdi", "nresp", "n_tweets", "location_id", "distance_km"),
               ((j.city, repr(j.mean_mmi), repr(j.cdi), j.nresp, j.n_tweets, j.location_id,
                 "" if j.distance_km is None else repr(j.distance_km)) for j in report.joined))
    _write_csv(out / "distance.csv", ("distance_km", "mmi"), ((repr(d), m) for d, m in report.distance_pairs))
    outputs = ["validation.json", "validation.txt", "joined.csv", "distance.csv"]
    if not args.no_figures:
        from . import plotting

        plotting.city_scatter(report.joined, report.city_r, out / "city_scatter.png")
        outputs.append("city_scatter.png")
        if report.distance_r is not None:
            plotting.distance_scatter(report.distance_pairs, report.distance_r, out / "distance_scatter.png")
            outputs.append("distance_scatter.png")
    sys.stdout.write(report.to_text())
    _write_manifest(out, RunManifest(
        "validate", cfg.digest if cfg else None, file_digest(args.assessments),
        None, started, outputs=outputs,
        counts={"records": len(records), "dyfi_rows": len(dyfi), "matched_cities": report.n_cities,
                "unmatched_cities": len(report.unmatched_cities)},
    ))
    return EXIT_OK


def sample_records(records: Sequence, size: int, seed: int) -> list:
    """Seeded sample without replacement, kept in corpus order."""
    if size >= len(records):
        return list(records)
    idx = sorted(random.Random(seed).sample(range(len(records)), size))
    return [records[i] for i in idx]


def cmd_sensitivity(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    loaded = _load_records(args)
    sample = sample_records(loaded.records, cfg.sample_size, cfg.seed)
    write_corpus(sample, out / "sample.jsonl")
    outputs = ["sample.jsonl"]
    runs = {}
    client, writer = make_client(cfg.backend)
    try:
        for version in cfg.versions:
            pipeline = dataclasses.replace(cfg.pipeline, prompt_version=version)
            name = f"assessments.{version}.jsonl"
            runs[version] = assess_batch(sample, pipeline, client, out_path=out / name, damage_only=True)
            outputs.append(name)
    finally:
        client.close()
        if writer is not None:
            writer.close()
    report = prompt_sensitivity(runs)
    (out / "sensitivity.json").write_text(json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n",
                                          encoding="utf-8")
    (out / "sensitivity.txt").write_text(report.to_text(), encoding="utf-8")
    _write_csv(out / "sensitivity.csv", ("version", "n", "DL_mean", "DL_std", "Conf_mean", "Conf_std"),
               ((v.version, v.n, repr(v.dl_mean), repr(v.dl_std), repr(v.conf_mean), repr(v.conf_std))
                for v in report.versions))
    outputs += ["sensitivity.json", "sensitivity.txt", "sensitivity.csv"]
    if not args.no_figures:
        from . import plotting

        plotting.sensitivity_bars(report, out / "sensitivity.png")
        outputs.append("sensitivity.png")
    sys.stdout.write(report.to_text())
    _write_manifest(out, RunManifest(
        "sensitivity", cfg.digest, file_digest(args.corpus), _backend_info(cfg), started,
        outputs=outputs,
        counts={"sample": len(sample), "seed": cfg.seed, "model_calls": client.calls,
                **{v: outcome_counts(r)["assessed"] for v, r in runs.items()}},
    ))
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing

def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _positive_float(s: str) -> float:
    v = float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="quake3m", description="Earthquake damage assessment from social-media posts.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def corpus_args(sp):
        sp.add_argument("--corpus", required=True, help="tweet corpus (.jsonl or .csv)")
        sp.add_argument("--format", choices=("jsonl", "csv"), help="override format detection")

    f = sub.add_parser("filter", help="keep damage-related posts")
    corpus_args(f)
    f.add_argument("--terms", action="append", help="terms.<lang>.txt file (repeatable; default: bundled en+ja)")
    f.add_argument("--keywords", action="append", help="extra required collection keyword (repeatable)")
    f.add_argument("--out", required=True, help="output directory")
    f.set_defaults(func=cmd_filter)

    def run_args(sp):
        corpus_args(sp)
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--backend", help="backend name from the config")
        sp.add_argument("--modality", choices=("text", "image", "fusion", "text_only", "image_only"))
        sp.add_argument("--parallelism", type=_positive_int)
        sp.add_argument("--out", required=True, help="output directory")

    a = sub.add_parser("assess", help="run the full pipeline")
    run_args(a)
    a.add_argument("--prompt-version", dest="prompt_version", choices=[f"v{i}" for i in range(1, 8)])
    a.set_defaults(func=cmd_assess)

    v = sub.add_parser("validate", help="compare assessments with DYFI ground truth")
    v.add_argument("--assessments", required=True, help="assessments.jsonl from 'assess'")
    v.add_argument("--dyfi", required=True, help="DYFI CSV (location_id, cdi, nresp, lat, lon)")
    v.add_argument("--config", help="run configuration (epicenter, dyfi_columns, max_join_km)")
    v.add_argument("--epicenter", help="LAT,LON; overrides the config event")
    v.add_argument("--max-join-km", dest="max_join_km", type=_positive_float)
    v.add_argument("--weight-nresp", dest="weight_nresp", action="store_true",
                   help="weight the city correlation by DYFI response counts")
    v.add_argument("--top-k", dest="top_k", type=_positive_int, default=10)
    v.add_argument("--no-figures", dest="no_figures", action="store_true")
    v.add_argument("--out", required=True, help="output directory")
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("sensitivity", help="damage verdicts across prompt versions v1..v7")
    run_args(s)
    s.add_argument("--seed", type=int)
    s.add_argument("--sample-size", dest="sample_size", type=_positive_int)
    s.add_argument("--versions", nargs="+", choices=[f"v{i}" for i in range(1, 8)])
    s.add_argument("--no-figures", dest="no_figures", action="store_true")
    s.set_defaults(func=cmd_sensitivity)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusError, ValidationError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except MllmError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
