"""Archived tweet ingestion and the multilingual damage-term filter."""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

log = logging.getLogger(__name__)

# Files smaller than this only report malformed lines; the abort threshold
# needs enough lines to be meaningful.
MIN_LINES_FOR_ABORT = 20
MAX_MALFORMED_FRACTION = 0.10

_NON_IMAGE_EXT = {".mp4", ".mov", ".m4v", ".webm", ".avi", ".mkv", ".mp3", ".wav", ".txt", ".pdf"}


class CorpusError(Exception):
    """Raised when a corpus file cannot be ingested."""


class ScriptHint(str, Enum):
    LATIN = "latin"
    CJK = "cjk"
    MIXED = "mixed"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class MediaRef:
    uri: str
    kind: str = "image"  # "image" | "other"

    def __post_init__(self):
        if not self.uri:
            raise ValueError("media uri must be non-empty")
        if self.kind not in ("image", "other"):
            raise ValueError(f"unknown media kind {self.kind!r}")

    @classmethod
    def from_uri(cls, uri: str) -> "MediaRef":
        path = uri.split("?", 1)[0].lower()
        ext = Path(path).suffix
        return cls(uri, "other" if ext in _NON_IMAGE_EXT else "image")


@dataclass(frozen=True)
class TweetRecord:
    id: str
    text: str
    created_at: datetime | None = None
    geotag: tuple[float, float] | None = None  # (lat, lon)
    profile_location: str | None = None
    media: tuple[MediaRef, ...] = ()
    script_hint: ScriptHint = ScriptHint.UNKNOWN

    def __post_init__(self):
        if not self.id:
            raise ValueError("tweet id must be non-empty")
        if self.geotag is not None:
            lat, lon = self.geotag
            if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
                raise ValueError(f"geotag out of range: {self.geotag}")

    @property
    def images(self) -> tuple[MediaRef, ...]:
        return tuple(m for m in self.media if m.kind == "image")

    def to_json(self) -> dict:
        out: dict = {"id": self.id, "text": self.text}
        if self.created_at is not None:
            out["created_at"] = self.created_at.isoformat().replace("+00:00", "Z")
        if self.geotag is not None:
            out["lat"], out["lon"] = self.geotag
        if self.profile_location is not None:
            out["user_location"] = self.profile_location
        if self.media:
            out["media"] = [m.uri if m.kind == "image" else {"uri": m.uri, "kind": m.kind} for m in self.media]
        return out


@dataclass(frozen=True)
class TermLibrary:
    language_tag: str
    terms: frozenset[str]

    def __post_init__(self):
        if not self.terms:
            raise ValueError(f"term library {self.language_tag!r} is empty")
        if any(not t for t in self.terms):
            raise ValueError("empty term in library")

    @classmethod
    def from_terms(cls, language_tag: str, terms: Iterable[str]) -> "TermLibrary":
        return cls(language_tag, frozenset(t.strip() for t in terms if t.strip()))


@dataclass
class LoadedCorpus:
    records: list[TweetRecord]
    malformed: list[tuple[int, str]] = field(default_factory=list)  # (line number, reason)

    def __len__(self):
        return len(self.records)


# --------------------------------------------------------------------------
# script detection

def _is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return (
        0x4E00 <= cp <= 0x9FFF  # CJK Unified Ideographs
        or 0x3400 <= cp <= 0x4DBF  # Extension A
        or 0x20000 <= cp <= 0x2A6DF  # Extension B
        or 0xF900 <= cp <= 0xFAFF  # Compatibility Ideographs
        or 0x3040 <= cp <= 0x309F  # Hiragana
        or 0x30A0 <= cp <= 0x30FF  # Katakana
        or 0x31F0 <= cp <= 0x31FF  # Katakana Phonetic Extensions
    )


def _is_latin_letter(ch: str) -> bool:
    # Basic Latin, Latin-1 Supplement, Latin Extended-A/B, plus fullwidth Latin
    if not ch.isalpha():
        return False
    cp = ord(ch)
    return cp <= 0x024F or 0x1E00 <= cp <= 0x1EFF or 0xFF21 <= cp <= 0xFF5A


def detect_script(text: str) -> ScriptHint:
    has_cjk = has_latin = False
    for ch in text:
        if not has_cjk and _is_cjk(ch):
            has_cjk = True
        elif not has_latin and _is_latin_letter(ch):
            has_latin = True
        if has_cjk and has_latin:
            return ScriptHint.MIXED
    if has_cjk:
        return ScriptHint.CJK
    if has_latin:
        return ScriptHint.LATIN
    return ScriptHint.UNKNOWN


# --------------------------------------------------------------------------
# loading

def _parse_timestamp(value) -> datetime | None:
    if value in (None, ""):
        return None
    if not isinstance(value, str):
        raise ValueError("created_at must be an ISO-8601 string")
    s = value.strip()
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def _parse_coord(value) -> float | None:
    if value in (None, ""):
        return None
    if isinstance(value, bool):
        raise ValueError("coordinate must be numeric")
    return float(value)


def _parse_media(value) -> tuple[MediaRef, ...]:
    if value in (None, ""):
        return ()
    if isinstance(value, str):
        value = [v for v in value.split("|") if v]
    if not isinstance(value, list):
        raise ValueError("media must be an array")
    out = []
    for item in value:
        if isinstance(item, str):
            out.append(MediaRef.from_uri(item))
        elif isinstance(item, dict) and isinstance(item.get("uri"), str):
            out.append(MediaRef(item["uri"], item.get("kind") or MediaRef.from_uri(item["uri"]).kind))
        else:
            raise ValueError(f"bad media entry {item!r}")
    return tuple(out)


def record_from_mapping(obj: Mapping) -> TweetRecord:
    """Build a TweetRecord from one corpus object; raises ValueError when malformed."""
    if not isinstance(obj, Mapping):
        raise ValueError("record is not an object")
    rid, text = obj.get("id"), obj.get("text")
    if isinstance(rid, int) and not isinstance(rid, bool):
        rid = str(rid)
    if not isinstance(rid, str) or not rid:
        raise ValueError("missing or non-string id")
    if not isinstance(text, str):
        raise ValueError("missing or non-string text")
    lat, lon = _parse_coord(obj.get("lat")), _parse_coord(obj.get("lon"))
    if (lat is None) != (lon is None):
        raise ValueError("lat and lon must both be present or both absent")
    loc = obj.get("user_location")
    if loc is not None and not isinstance(loc, str):
        raise ValueError("user_location must be a string")
    return TweetRecord(
        id=rid,
        text=text,
        created_at=_parse_timestamp(obj.get("created_at")),
        geotag=None if lat is None else (lat, lon),
        profile_location=loc or None,
        media=_parse_media(obj.get("media")),
        script_hint=detect_script(text),
    )


def _iter_jsonl(path: Path):
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line), None
            except json.JSONDecodeError as exc:
                yield lineno, None, f"invalid JSON: {exc.msg}"


def _iter_csv(path: Path, mapping: Mapping[str, str] | None):
    # mapping: canonical field -> CSV column header
    mapping = dict(mapping or {})
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for i, row in enumerate(reader, 2):
            obj = {}
            for key in ("id", "created_at", "text", "lat", "lon", "user_location", "media"):
                col = mapping.get(key, key)
                if col in row and row[col] is not None:
                    obj[key] = row[col]
            yield i, obj, None


def load_corpus(
    path: str | Path,
    format: str | None = None,
    *,
    csv_mapping: Mapping[str, str] | None = None,
    max_malformed_fraction: float = MAX_MALFORMED_FRACTION,
) -> LoadedCorpus:
    """Read a JSONL or CSV corpus in file order.

    Malformed lines are skipped but reported in ``LoadedCorpus.malformed``.
    Raises CorpusError when the file is unreadable, when ids repeat, or when
    more than ``max_malformed_fraction`` of lines are malformed (files with at
    least MIN_LINES_FOR_ABORT lines only).
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt not in ("jsonl", "csv"):
        raise CorpusError(f"unsupported corpus format {fmt!r}")
    if not path.is_file():
        raise CorpusError(f"corpus file not found: {path}")

    rows = _iter_jsonl(path) if fmt == "jsonl" else _iter_csv(path, csv_mapping)
    records: list[TweetRecord] = []
    malformed: list[tuple[int, str]] = []
    seen: dict[str, int] = {}
    duplicates: list[str] = []
    total = 0
    try:
        for lineno, obj, err in rows:
            total += 1
            if err is None:
                try:
                    rec = record_from_mapping(obj)
                except (ValueError, TypeError) as exc:
                    err = str(exc)
            if err is not None:
                malformed.append((lineno, err))
                continue
            if rec.id in seen:
                duplicates.append(rec.id)
                continue
            seen[rec.id] = lineno
            records.append(rec)
    except (OSError, UnicodeDecodeError) as exc:
        raise CorpusError(f"cannot read {path}: {exc}") from exc

    if duplicates:
        raise CorpusError(f"duplicate tweet ids in {path}: {', '.join(sorted(set(duplicates)))}")
    if malformed:
        log.warning("%s: %d of %d lines malformed", path, len(malformed), total)
        if total >= MIN_LINES_FOR_ABORT and len(malformed) / total > max_malformed_fraction:
            sample = "; ".join(f"line {n}: {why}" for n, why in malformed[:5])
            raise CorpusError(
                f"{len(malformed)}/{total} malformed lines in {path} "
                f"exceeds {max_malformed_fraction:.0%} ({sample})"
            )
    return LoadedCorpus(records, malformed)


def write_corpus(records: Iterable[TweetRecord], path: str | Path) -> int:
    n = 0
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")
            n += 1
    return n


# --------------------------------------------------------------------------
# term libraries and filtering

def load_term_library(path: str | Path, language_tag: str | None = None) -> TermLibrary:
    """Read a ``terms.<lang>.txt`` file: one term per line, ``#`` comments."""
    path = Path(path)
    if language_tag is None:
        parts = path.name.split(".")
        language_tag = parts[1] if len(parts) >= 3 and parts[0] == "terms" else path.stem
    terms = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            terms.append(line)
    return TermLibrary.from_terms(language_tag, terms)


def bundled_libraries() -> list[TermLibrary]:
    """The English and Japanese damage-term libraries shipped with the package."""
    data = resources.files("quake3m") / "data"
    libs = []
    for lang in ("en", "ja"):
        with resources.as_file(data / f"terms.{lang}.txt") as p:
            libs.append(load_term_library(p, lang))
    return libs


# A Latin term needs a word boundary on both sides. Kana and ideographs count
# as boundaries (as in Unicode word segmentation), so "outageが" matches.
_CJK_CLASS = "\u3040-\u30ff\u31f0-\u31ff\u3400-\u4dbf\u4e00-\u9fff\uf900-\ufaff"
_NOT_WORD_BEFORE = f"(?<![^\\W{_CJK_CLASS}])"
_NOT_WORD_AFTER = f"(?![^\\W{_CJK_CLASS}])"


def _uses_substring_rule(term: str) -> bool:
    return any(_is_cjk(ch) for ch in term)


class TermMatcher:
    """Compiled matcher over one or more term libraries.

    Latin terms match case-insensitively on Unicode word boundaries; CJK terms
    match as raw substrings.
    """

    def __init__(self, libraries: Sequence[TermLibrary]):
        if not libraries:
            raise ValueError("at least one term library is required")
        words, subs = set(), set()
        for lib in libraries:
            for t in lib.terms:
                (subs if _uses_substring_rule(t) else words).add(t)
        self.word_terms = frozenset(words)
        self.substring_terms = frozenset(subs)
        # longest first so the reported match is the most specific one
        alts = sorted(words, key=lambda t: (-len(t), t))
        self._word_re = (
            re.compile(_NOT_WORD_BEFORE + "(?:" + "|".join(map(re.escape, alts)) + ")" + _NOT_WORD_AFTER,
                       re.IGNORECASE)
            if alts else None
        )
        self._subs = sorted(subs, key=lambda t: (-len(t), t))

    def find(self, text: str) -> str | None:
        if self._word_re is not None:
            m = self._word_re.search(text)
            if m:
                return m.group(0)
        for t in self._subs:
            if t in text:
                return t
        return None

    def matches(self, text: str) -> bool:
        return self.find(text) is not None


def filter_damage_related(
    corpus: Sequence[TweetRecord],
    libraries: Sequence[TermLibrary],
    *,
    require_keywords: Sequence[str] | None = None,
) -> list[TweetRecord]:
    """Keep records whose text contains at least one library term.

    ``require_keywords`` is the optional collection-keyword pre-filter (off by
    default): when given, a record must also contain one of those keywords
    under the same matching rules.
    """
    matcher = TermMatcher(libraries)
    pre = TermMatcher([TermLibrary.from_terms("keywords", require_keywords)]) if require_keywords else None
    return [r for r in corpus if matcher.matches(r.text) and (pre is None or pre.matches(r.text))]
