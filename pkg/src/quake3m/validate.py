"""Ground-truth comparison and robustness statistics.

Pearson correlation against DYFI intensities, distance attenuation, Cramér's V
across prompt versions, two-coder nominal Krippendorff's alpha and per-MMI
TF-IDF over model reasoning.
"""

from __future__ import annotations

import csv
import json
import math
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Hashable, Iterable, Mapping, Sequence

from .assess import AssessmentRecord, CityAggregate, Outcome, aggregate_by_city, normalize_city_name
from .geo import GeoPoint, haversine_km

DEFAULT_MAX_JOIN_KM = 30.0
EXTERIOR_TYPES = frozenset({"Exterior", "Both"})

PER_LEVEL_BUCKETS: tuple[tuple[int, int], ...] = tuple((i, i) for i in range(11))
NARRATIVE_BUCKETS: tuple[tuple[int, int], ...] = ((0, 3), (4, 5), (6, 9))


class ValidationError(ValueError):
    pass


class LengthMismatchError(ValidationError):
    pass


class ConstantSeriesError(ValidationError):
    pass


class DegenerateTableError(ValidationError):
    pass


class NoChanceDisagreementError(ValidationError):
    """All annotations fall in one category, so expected disagreement is 0."""


class TooFewPointsError(ValidationError):
    pass


class EmptyBucketError(ValidationError):
    pass


# --------------------------------------------------------------------------
# correlation

def pearson_r(x: Sequence[float], y: Sequence[float], weights: Sequence[float] | None = None) -> float:
    """Sample Pearson correlation, optionally with non-negative weights."""
    n = len(x)
    if n != len(y) or (weights is not None and len(weights) != n):
        raise LengthMismatchError(f"series lengths differ: {n} vs {len(y)}")
    if n < 2:
        raise TooFewPointsError(f"need at least 2 points, got {n}")
    w = [1.0] * n if weights is None else [float(v) for v in weights]
    if any(v < 0 for v in w):
        raise ValidationError("weights must be non-negative")
    sw = math.fsum(w)
    if sw <= 0:
        raise ValidationError("weights sum to zero")
    mx = math.fsum(wi * xi for wi, xi in zip(w, x)) / sw
    my = math.fsum(wi * yi for wi, yi in zip(w, y)) / sw
    dx = [xi - mx for xi in x]
    dy = [yi - my for yi in y]
    sxx = math.fsum(wi * d * d for wi, d in zip(w, dx))
    syy = math.fsum(wi * d * d for wi, d in zip(w, dy))
    if sxx == 0 or syy == 0:
        raise ConstantSeriesError("correlation undefined for a constant series")
    sxy = math.fsum(wi * a * b for wi, a, b in zip(w, dx, dy))
    r = sxy / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


# --------------------------------------------------------------------------
# Cramér's V

@dataclass(frozen=True)
class ContingencyTable:
    counts: tuple[tuple[int, ...], ...]
    row_labels: tuple = ()
    col_labels: tuple = ()

    def __post_init__(self):
        rows = tuple(tuple(int(c) for c in r) for r in self.counts)
        if not rows or not rows[0]:
            raise DegenerateTableError("contingency table is empty")
        if len({len(r) for r in rows}) != 1:
            raise ValidationError("contingency table rows differ in length")
        if any(c < 0 for r in rows for c in r):
            raise ValidationError("contingency counts must be non-negative")
        object.__setattr__(self, "counts", rows)

    @property
    def n(self) -> int:
        return sum(map(sum, self.counts))

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.counts), len(self.counts[0])

    @property
    def k(self) -> int:
        return min(self.shape)

    @classmethod
    def from_labels(cls, rows: Sequence[Hashable], cols: Sequence[Hashable]) -> "ContingencyTable":
        if len(rows) != len(cols):
            raise LengthMismatchError("label sequences differ in length")
        rl = sorted(set(rows), key=str)
        cl = sorted(set(cols), key=str)
        c = Counter(zip(rows, cols))
        return cls(tuple(tuple(c[(r, k)] for k in cl) for r in rl), tuple(rl), tuple(cl))

    def without_empty_margins(self) -> "ContingencyTable | None":
        keep_r = [i for i, r in enumerate(self.counts) if sum(r)]
        keep_c = [j for j in range(self.shape[1]) if any(r[j] for r in self.counts)]
        if not keep_r or not keep_c:
            return None
        counts = tuple(tuple(self.counts[i][j] for j in keep_c) for i in keep_r)
        rl = tuple(self.row_labels[i] for i in keep_r) if self.row_labels else ()
        cl = tuple(self.col_labels[j] for j in keep_c) if self.col_labels else ()
        return ContingencyTable(counts, rl, cl)


def chi_squared(t: ContingencyTable) -> float:
    n = t.n
    if n <= 0:
        raise DegenerateTableError("contingency table has no counts")
    rows = [sum(r) for r in t.counts]
    cols = [sum(c) for c in zip(*t.counts)]
    if 0 in rows or 0 in cols:
        raise DegenerateTableError("a row or column margin is zero (expected count 0)")
    terms = []
    for i, r in enumerate(t.counts):
        for j, obs in enumerate(r):
            exp = rows[i] * cols[j] / n
            terms.append((obs - exp) ** 2 / exp)
    return math.fsum(terms)


def cramers_v(t: ContingencyTable | Sequence[Sequence[int]]) -> float:
    """V = sqrt(chi2 / (n (k - 1))) with the uncorrected Pearson chi-squared."""
    if not isinstance(t, ContingencyTable):
        t = ContingencyTable(t)
    if t.k < 2:
        raise DegenerateTableError(f"Cramér's V needs at least 2 rows and 2 columns, shape is {t.shape}")
    v2 = chi_squared(t) / (t.n * (t.k - 1))
    return min(1.0, math.sqrt(max(0.0, v2)))


# --------------------------------------------------------------------------
# Krippendorff's alpha (two coders, nominal)

@dataclass(frozen=True)
class AnnotationPair:
    items: tuple[tuple[Hashable, Hashable], ...]

    def __post_init__(self):
        items = tuple(tuple(p) for p in self.items)
        for p in items:
            if len(p) != 2 or p[0] is None or p[1] is None:
                raise ValidationError(f"each item needs two labels, got {p!r}")
        object.__setattr__(self, "items", items)

    @classmethod
    def from_coders(cls, a: Sequence[Hashable], b: Sequence[Hashable]) -> "AnnotationPair":
        if len(a) != len(b):
            raise LengthMismatchError("coder label sequences differ in length")
        return cls(tuple(zip(a, b)))

    def __len__(self):
        return len(self.items)


def disagreement(pairs: AnnotationPair) -> tuple[float, float]:
    """(Do, De) for nominal data.

    Do is the fraction of items where the coders differ; De sums p(c1) p(c2)
    over ordered pairs of distinct categories, p(c) = n_c / 2N.
    """
    n_items = len(pairs)
    if n_items < 1:
        raise TooFewPointsError("need at least one annotated item")
    do = sum(a != b for a, b in pairs.items) / n_items
    counts = Counter(lab for p in pairs.items for lab in p)
    total = 2 * n_items
    p = [c / total for c in counts.values()]
    # sum over c1 != c2 of p1 p2 = 1 - sum p^2
    de = max(0.0, 1.0 - math.fsum(q * q for q in p))
    return do, de


def krippendorff_alpha(
    pairs: AnnotationPair | Iterable[tuple[Hashable, Hashable]], coder_b: Sequence[Hashable] | None = None
) -> float:
    """alpha = 1 - Do/De. Accepts an AnnotationPair, (a, b) tuples, or two label lists."""
    if coder_b is not None:
        pairs = AnnotationPair.from_coders(list(pairs), coder_b)
    elif not isinstance(pairs, AnnotationPair):
        pairs = AnnotationPair(tuple(pairs))
    do, de = disagreement(pairs)
    if de == 0:
        raise NoChanceDisagreementError("all annotations use one category; alpha is undefined")
    return 1.0 - do / de


# --------------------------------------------------------------------------
# DYFI

@dataclass(frozen=True)
class DyfiRecord:
    location_id: str
    cdi: float
    nresp: int
    point: GeoPoint

    def __post_init__(self):
        if not (1.0 <= self.cdi <= 10.0):
            raise ValidationError(f"cdi out of [1,10]: {self.cdi}")
        if self.nresp < 1:
            raise ValidationError(f"nresp must be >= 1: {self.nresp}")


DYFI_COLUMNS = ("location_id", "cdi", "nresp", "lat", "lon")


def load_dyfi(path: str | Path, mapping: Mapping[str, str] | None = None) -> list[DyfiRecord]:
    """Read a DYFI CSV.

    ``mapping`` maps our column names to the file's headers, for example
    ``{"location_id": "Geocoded box", "cdi": "CDI", "nresp": "No. of responses"}``.
    Lines starting with ``#`` are skipped.
    """
    mapping = {k: (mapping or {}).get(k, k) for k in DYFI_COLUMNS}
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.lstrip().startswith("#"))
        headers = [h.strip() for h in (reader.fieldnames or [])]
        missing = [f"{k} (column {v!r})" for k, v in mapping.items() if v not in headers]
        if missing:
            raise ValidationError(f"{path}: DYFI file lacks columns: {', '.join(missing)}")
        out = []
        for lineno, row in enumerate(reader, 2):
            row = {(k or "").strip(): (v or "").strip() for k, v in row.items()}
            try:
                out.append(DyfiRecord(
                    location_id=row[mapping["location_id"]],
                    cdi=float(row[mapping["cdi"]]),
                    nresp=int(float(row[mapping["nresp"]])),
                    point=GeoPoint(float(row[mapping["lat"]]), float(row[mapping["lon"]])),
                ))
            except ValueError as exc:
                raise ValidationError(f"{path}: row {lineno}: {exc}") from exc
    return out


def write_dyfi(rows: Iterable[DyfiRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DYFI_COLUMNS)
        for r in rows:
            w.writerow([r.location_id, repr(r.cdi), r.nresp, repr(r.point.lat), repr(r.point.lon)])


@dataclass(frozen=True)
class JoinedCity:
    city: str
    mean_mmi: float
    cdi: float
    nresp: int
    n_tweets: int
    location_id: str
    distance_km: float | None  # None when matched by name


@dataclass
class JoinResult:
    matched: list[JoinedCity]
    unmatched: list[CityAggregate]


def join_with_dyfi(
    aggregates: Sequence[CityAggregate], dyfi: Sequence[DyfiRecord], max_km: float = DEFAULT_MAX_JOIN_KM
) -> JoinResult:
    """Match each city to the nearest DYFI row within ``max_km``.

    Cities with no row in range fall back to an exact (normalized) match of
    their name against ``location_id``. A DYFI row may serve several cities.
    """
    if not max_km > 0:
        raise ValidationError("max_km must be positive")
    by_name: dict[str, DyfiRecord] = {}
    for d in dyfi:
        by_name.setdefault(normalize_city_name(d.location_id)[0].casefold(), d)
    matched, unmatched = [], []
    for agg in aggregates:
        best = None
        for d in dyfi:
            km = haversine_km(agg.point, d.point)
            if km <= max_km and (best is None or (km, d.location_id) < (best[1], best[0].location_id)):
                best = (d, km)
        if best is None:
            hit = by_name.get(agg.city_name.casefold())
            if hit is None:
                unmatched.append(agg)
                continue
            best = (hit, None)
        d, km = best
        matched.append(JoinedCity(agg.city_name, agg.mean_mmi, d.cdi, d.nresp, agg.n, d.location_id, km))
    return JoinResult(matched, unmatched)


def city_correlation(joined: Sequence[JoinedCity], weight_nresp: bool = False) -> float:
    if len(joined) < 2:
        raise TooFewPointsError(f"need at least 2 matched cities, got {len(joined)}")
    w = [j.nresp for j in joined] if weight_nresp else None
    return pearson_r([j.mean_mmi for j in joined], [j.cdi for j in joined], w)


def _assessed_with_point(records: Iterable[AssessmentRecord]) -> list[AssessmentRecord]:
    return [r for r in records if r.outcome is Outcome.ASSESSED and r.point is not None]


def distance_attenuation(
    records: Sequence[AssessmentRecord], epicenter: GeoPoint
) -> tuple[float, list[tuple[float, int]]]:
    """Tweet-level Pearson r between epicentral distance and MMI."""
    pairs = [(haversine_km(r.point, epicenter), r.verdict.mmi) for r in _assessed_with_point(records)]
    if len(pairs) < 2:
        raise TooFewPointsError(f"need at least 2 assessed records with points, got {len(pairs)}")
    return pearson_r([p[0] for p in pairs], [p[1] for p in pairs]), pairs


def city_distance_attenuation(
    aggregates: Sequence[CityAggregate], epicenter: GeoPoint
) -> tuple[float, list[tuple[float, float]]]:
    """City-level variant of :func:`distance_attenuation` over mean MMI."""
    pairs = [(haversine_km(a.point, epicenter), a.mean_mmi) for a in aggregates]
    if len(pairs) < 2:
        raise TooFewPointsError(f"need at least 2 cities, got {len(pairs)}")
    return pearson_r([p[0] for p in pairs], [p[1] for p in pairs]), pairs


def exterior_subset_correlation(
    records: Sequence[AssessmentRecord],
    dyfi: Sequence[DyfiRecord],
    max_km: float = DEFAULT_MAX_JOIN_KM,
    weight_nresp: bool = False,
) -> tuple[float, int]:
    """City-level r restricted to Exterior/Both verdicts.

    Returns ``(r, n)`` where n counts the subset tweets in matched cities.
    """
    subset = [r for r in _assessed_with_point(records) if r.verdict.damage_type in EXTERIOR_TYPES]
    joined = join_with_dyfi(aggregate_by_city(subset), dyfi, max_km).matched
    r = city_correlation(joined, weight_nresp)
    return r, sum(j.n_tweets for j in joined)


# --------------------------------------------------------------------------
# prompt sensitivity

@dataclass(frozen=True)
class VersionStats:
    version: str
    n: int
    dl_mean: float
    dl_std: float
    conf_mean: float
    conf_std: float


@dataclass(frozen=True)
class CategoricalAssociation:
    field: str
    cramers_v: float
    degenerate: bool
    table: ContingencyTable


SENSITIVITY_COLUMNS = ("version", "n", "DL_mean", "DL_std", "Conf_mean", "Conf_std")


@dataclass
class SensitivityReport:
    versions: list[VersionStats]
    associations: list[CategoricalAssociation] = field(default_factory=list)

    def association(self, name: str) -> CategoricalAssociation:
        for a in self.associations:
            if a.field == name:
                return a
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "columns": list(SENSITIVITY_COLUMNS),
            "versions": [
                {"version": v.version, "n": v.n, "DL_mean": v.dl_mean, "DL_std": v.dl_std,
                 "Conf_mean": v.conf_mean, "Conf_std": v.conf_std}
                for v in self.versions
            ],
            "cramers_v": [
                {"field": a.field, "V": a.cramers_v, "degenerate": a.degenerate,
                 "rows": [str(x) for x in a.table.row_labels],
                 "cols": [str(x) for x in a.table.col_labels],
                 "counts": [list(r) for r in a.table.counts]}
                for a in self.associations
            ],
        }

    def to_text(self) -> str:
        rows = [SENSITIVITY_COLUMNS] + [
            (v.version, str(v.n), f"{v.dl_mean:.2f}", f"{v.dl_std:.2f}", f"{v.conf_mean:.2f}", f"{v.conf_std:.2f}")
            for v in self.versions
        ]
        lines = [_align(rows)]
        for a in self.associations:
            flag = "  (degenerate)" if a.degenerate else ""
            lines.append(f"Cramér's V {a.field}: {a.cramers_v:.3f}{flag}")
        return "\n".join(lines) + "\n"


def _align(rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join(
        "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))).rstrip()
        for r in rows
    )


def _mean_std(xs: Sequence[float]) -> tuple[float, float]:
    m = math.fsum(xs) / len(xs)
    return m, math.sqrt(math.fsum((x - m) ** 2 for x in xs) / len(xs))


def association_across_versions(
    runs: Mapping[str, Sequence[AssessmentRecord]], attr: str
) -> CategoricalAssociation:
    versions, cats = [], []
    for version, recs in runs.items():
        for r in recs:
            if r.outcome is Outcome.ASSESSED:
                versions.append(version)
                cats.append(getattr(r.verdict, attr))
    table = ContingencyTable.from_labels(versions, cats) if versions else None
    trimmed = table.without_empty_margins() if table is not None else None
    if trimmed is None or trimmed.k < 2:
        return CategoricalAssociation(attr, 0.0, True, trimmed or table or ContingencyTable(((0,),)))
    return CategoricalAssociation(attr, cramers_v(trimmed), False, trimmed)


def prompt_sensitivity(
    runs: Mapping[str, Sequence[AssessmentRecord]],
    categorical: Sequence[str] = ("human_impact", "damage_type"),
) -> SensitivityReport:
    """Per-version damage-level/confidence mean and population std, plus V.

    Categorical fields with a single observed category (or one version) have
    no defined association; they are reported as V = 0 with ``degenerate``.
    """
    if len(runs) < 2:
        raise ValidationError("prompt sensitivity needs at least 2 versions")
    stats = []
    for version, recs in runs.items():
        verdicts = [r.verdict for r in recs if r.outcome is Outcome.ASSESSED]
        if not verdicts:
            raise TooFewPointsError(f"version {version} has no assessed records")
        dl_m, dl_s = _mean_std([v.damage_level for v in verdicts])
        cf_m, cf_s = _mean_std([v.confidence for v in verdicts])
        stats.append(VersionStats(version, len(verdicts), dl_m, dl_s, cf_m, cf_s))
    assoc = [association_across_versions(runs, a) for a in categorical]
    return SensitivityReport(stats, assoc)


# --------------------------------------------------------------------------
# TF-IDF over reasoning text

_TOKEN_RE = re.compile(r"\w+")


def load_stopwords(lang: str) -> frozenset[str]:
    ref = resources.files("quake3m") / "data" / f"stopwords.{lang}.txt"
    lines = ref.read_text(encoding="utf-8").splitlines()
    return frozenset(w.strip().lower() for w in lines if w.strip() and not w.startswith("#"))


def default_stopwords() -> frozenset[str]:
    return load_stopwords("en") | load_stopwords("ja")


def tokenize(text: str, stopwords: frozenset[str] | set[str] = frozenset()) -> list[str]:
    return [t for t in _TOKEN_RE.findall(text.lower()) if t not in stopwords and not t.isdigit()]


def bucket_label(bucket: tuple[int, int]) -> str:
    lo, hi = bucket
    return str(lo) if lo == hi else f"{lo}-{hi}"


def tfidf_by_mmi(
    records: Sequence[AssessmentRecord],
    buckets: Sequence[tuple[int, int]] = PER_LEVEL_BUCKETS,
    top_k: int = 10,
    stopwords: frozenset[str] | set[str] | None = None,
    *,
    skip_empty: bool = False,
) -> dict[str, list[tuple[str, float]]]:
    """Top terms per damage-level bucket.

    Each bucket's reasoning texts form one document; tf is the raw count and
    idf = ln(B / df). Terms scoring 0 are never listed. Ties break on the term.
    """
    if stopwords is None:
        stopwords = default_stopwords()
    docs: dict[str, Counter] = {}
    for b in buckets:
        lo, hi = b
        texts = [r.verdict.reasoning for r in records
                 if r.outcome is Outcome.ASSESSED and lo <= r.verdict.damage_level <= hi]
        if not texts:
            if skip_empty:
                continue
            raise EmptyBucketError(f"bucket {bucket_label(b)} has no assessed records")
        docs[bucket_label(b)] = Counter(t for text in texts for t in tokenize(text, stopwords))
    n_docs = len(docs)
    if n_docs == 0:
        raise EmptyBucketError("all buckets are empty")
    df = Counter(t for c in docs.values() for t in c)
    out = {}
    for label, tf in docs.items():
        scored = [(t, c * math.log(n_docs / df[t])) for t, c in tf.items()]
        scored = [s for s in scored if s[1] > 0]
        scored.sort(key=lambda s: (-s[1], s[0]))
        out[label] = scored[:top_k]
    return out


# --------------------------------------------------------------------------
# report

@dataclass
class ValidationReport:
    city_r: float
    n_cities: int
    n_tweets: int
    weighted: bool
    max_km: float
    distance_r: float | None
    city_distance_r: float | None
    exterior_r: float | None
    exterior_n: int
    unmatched_cities: list[str]
    joined: list[JoinedCity] = field(default_factory=list)
    distance_pairs: list[tuple[float, int]] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    tfidf: dict[str, list[tuple[str, float]]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["joined"] = [asdict(j) for j in self.joined]
        d["distance_pairs"] = [list(p) for p in self.distance_pairs]
        d["tfidf"] = {k: [[t, s] for t, s in v] for k, v in self.tfidf.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2) + "\n"

    def to_text(self) -> str:
        def fmt(x):
            return "n/a" if x is None else f"{x:.3f}"

        rows = [
            ("metric", "r", "n"),
            ("city-level vs DYFI" + (" (nresp-weighted)" if self.weighted else ""),
             fmt(self.city_r), f"{self.n_cities} cities / {self.n_tweets} tweets"),
            ("exterior subset vs DYFI", fmt(self.exterior_r), f"{self.exterior_n} tweets"),
            ("distance vs MMI (tweets)", fmt(self.distance_r), str(len(self.distance_pairs))),
            ("distance vs MMI (cities)", fmt(self.city_distance_r), ""),
        ]
        out = [_align(rows), f"join radius: {self.max_km:g} km; unmatched cities: {len(self.unmatched_cities)}"]
        out += [f"note: {n}" for n in self.notes]
        for label, terms in self.tfidf.items():
            out.append(f"top terms MMI {label}: " + ", ".join(f"{t} ({s:.2f})" for t, s in terms))
        return "\n".join(out) + "\n"


def validate_assessments(
    records: Sequence[AssessmentRecord],
    dyfi: Sequence[DyfiRecord],
    epicenter: GeoPoint,
    max_km: float = DEFAULT_MAX_JOIN_KM,
    weight_nresp: bool = False,
    tfidf_buckets: Sequence[tuple[int, int]] | None = PER_LEVEL_BUCKETS,
    top_k: int = 10,
) -> ValidationReport:
    """Full comparison of one assessment run against DYFI.

    Raises :class:`TooFewPointsError` when fewer than two cities join. The
    secondary rows (exterior subset, attenuation) become ``None`` with a note
    when undefined.
    """
    aggregates = aggregate_by_city(records)
    join = join_with_dyfi(aggregates, dyfi, max_km)
    city_r = city_correlation(join.matched, weight_nresp)
    notes = []

    def _try(fn, what):
        try:
            return fn()
        except ValidationError as exc:
            notes.append(f"{what}: {exc}")
            return None

    ext = _try(lambda: exterior_subset_correlation(records, dyfi, max_km, weight_nresp), "exterior subset")
    dist = _try(lambda: distance_attenuation(records, epicenter), "distance attenuation")
    cdist = _try(lambda: city_distance_attenuation(aggregates, epicenter), "city distance attenuation")
    tfidf = {}
    if tfidf_buckets:
        tfidf = _try(lambda: tfidf_by_mmi(records, tfidf_buckets, top_k, skip_empty=True), "tf-idf") or {}
    return ValidationReport(
        city_r=city_r,
        n_cities=len(join.matched),
        n_tweets=sum(j.n_tweets for j in join.matched),
        weighted=weight_nresp,
        max_km=max_km,
        distance_r=None if dist is None else dist[0],
        city_distance_r=None if cdist is None else cdist[0],
        exterior_r=None if ext is None else ext[0],
        exterior_n=0 if ext is None else ext[1],
        unmatched_cities=[a.city_name for a in join.unmatched],
        joined=join.matched,
        distance_pairs=[] if dist is None else dist[1],
        notes=notes,
        tfidf=tfidf,
    )
