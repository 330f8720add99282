"""Offline geography: haversine distance, gazetteer lookup, tiered location resolution."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

EARTH_RADIUS_KM = 6371.0
REVERSE_GEOCODE_MAX_KM = 100.0

NO_LOCATION = "No"


class Granularity(str, Enum):
    POI = "poi"
    NEIGHBORHOOD = "neighborhood"
    CITY = "city"
    COUNTY = "county"
    STATE = "state"
    COUNTRY = "country"

    @property
    def rank(self) -> int:
        # smaller is finer
        return _GRAN_ORDER.index(self)


_GRAN_ORDER = list(Granularity)


class Tier(str, Enum):
    GEOTAG = "geotag"
    CONTENT = "content"
    PROFILE = "profile"
    UNRESOLVED = "unresolved"


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0):
            raise ValueError(f"latitude out of range: {self.lat}")
        if not (-180.0 <= self.lon <= 180.0):
            raise ValueError(f"longitude out of range: {self.lon}")


@dataclass(frozen=True)
class ResolvedLocation:
    name: str
    point: GeoPoint | None
    tier: Tier
    granularity: Granularity | None = None
    country: str | None = None

    def __post_init__(self):
        if self.tier is Tier.GEOTAG and self.point is None:
            raise ValueError("geotag tier requires a point")
        if self.tier is Tier.UNRESOLVED and (self.name or self.point is not None):
            raise ValueError("unresolved location carries no name or point")

    @classmethod
    def unresolved(cls) -> "ResolvedLocation":
        return cls("", None, Tier.UNRESOLVED, None)


@dataclass(frozen=True)
class EventConfig:
    event_name: str
    epicenter: GeoPoint
    country: str | None = None
    start: datetime | None = None
    end: datetime | None = None
    # Replaces "U.S." in the location prompt for events elsewhere, e.g. "Japan".
    region_label: str | None = None

    def __post_init__(self):
        if self.start is not None and self.end is not None and not self.start < self.end:
            raise ValueError("event start must precede end")

    def in_window(self, ts: datetime | None) -> bool:
        if ts is None:
            return True
        if self.start is not None and ts < self.start:
            return False
        if self.end is not None and ts > self.end:
            return False
        return True


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in kilometres on a sphere of radius 6371 km."""
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dphi = phi2 - phi1
    dlmb = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    h = min(1.0, max(0.0, h))
    return 2.0 * EARTH_RADIUS_KM * math.asin(math.sqrt(h))


# --------------------------------------------------------------------------
# gazetteer

@dataclass(frozen=True)
class GazetteerEntry:
    name: str
    aliases: tuple[str, ...]
    point: GeoPoint
    granularity: Granularity
    country: str

    def __post_init__(self):
        if not self.name:
            raise ValueError("gazetteer entry name must be non-empty")


def _key(name: str) -> str:
    return " ".join(name.casefold().split())


@dataclass
class Gazetteer:
    entries: list[GazetteerEntry]
    _index: dict[str, list[GazetteerEntry]] = field(init=False, repr=False)

    def __post_init__(self):
        self._index = {}
        for e in self.entries:
            for n in {_key(e.name), *(_key(a) for a in e.aliases)}:
                if n:
                    self._index.setdefault(n, []).append(e)

    def __len__(self):
        return len(self.entries)

    def candidates(self, name: str) -> list[GazetteerEntry]:
        return list(self._index.get(_key(name), ()))

    @classmethod
    def from_tsv(cls, path: str | Path) -> "Gazetteer":
        entries = []
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            cols = line.rstrip("\n").split("\t")
            if len(cols) != 6:
                raise ValueError(f"{path}:{lineno}: expected 6 tab-separated columns, got {len(cols)}")
            name, aliases, lat, lon, gran, country = (c.strip() for c in cols)
            entries.append(GazetteerEntry(
                name=name,
                aliases=tuple(a.strip() for a in aliases.split("|") if a.strip()),
                point=GeoPoint(float(lat), float(lon)),
                granularity=Granularity(gran),
                country=country.upper(),
            ))
        return cls(entries)

    @classmethod
    def bundled(cls) -> "Gazetteer":
        with resources.as_file(resources.files("quake3m") / "data" / "gazetteer.tsv") as p:
            return cls.from_tsv(p)

    def nearest(
        self,
        point: GeoPoint,
        max_km: float = REVERSE_GEOCODE_MAX_KM,
        granularities: Iterable[Granularity] = (Granularity.CITY,),
    ) -> tuple[GazetteerEntry, float] | None:
        allowed = set(granularities)
        best = None
        for e in self.entries:
            if e.granularity not in allowed:
                continue
            d = haversine_km(point, e.point)
            if d <= max_km and (best is None or (d, e.name) < (best[1], best[0].name)):
                best = (e, d)
        return best


def _pick(cands: Sequence[GazetteerEntry], country: str | None) -> GazetteerEntry:
    cc = country.upper() if country else None
    return min(cands, key=lambda e: (e.granularity.rank, 0 if cc is None or e.country == cc else 1, e.name))


def lookup(
    gazetteer: Gazetteer, name: str, country: str | None = None, *, restrict: bool = False
) -> GazetteerEntry | None:
    """Entry lookup behind :func:`geocode`.

    Case-insensitive exact match on name or alias. When nothing matches and
    the name carries a comma qualifier ("Ridgecrest, Kern County"), the part
    before the first comma is tried. ``restrict`` drops candidates outside
    ``country`` instead of merely ranking them lower.
    """
    if not name or not name.strip():
        return None

    def _cands(n):
        found = gazetteer.candidates(n)
        if restrict and country:
            found = [e for e in found if e.country == country.upper()]
        return found

    cands = _cands(name)
    if not cands and "," in name:
        cands = _cands(name.split(",", 1)[0])
    if not cands:
        return None
    return _pick(cands, country)


def geocode(gazetteer: Gazetteer, name: str, country: str | None = None) -> tuple[GeoPoint, Granularity] | None:
    entry = lookup(gazetteer, name, country)
    return None if entry is None else (entry.point, entry.granularity)


def resolve_tiered(
    record,
    content_name: str | None,
    gazetteer: Gazetteer,
    country: str | None = None,
) -> ResolvedLocation:
    """Resolve a tweet's location: geotag, then content mention, then profile.

    ``content_name`` is the model-extracted location (or "No"). With
    ``country`` set, content/profile matches in other countries are dropped,
    and a geotag whose nearest place lies in another country is unresolved.
    """
    cc = country.upper() if country else None
    if record.geotag is not None:
        pt = GeoPoint(*record.geotag)
        hit = gazetteer.nearest(pt)
        if hit is None:
            return ResolvedLocation("", pt, Tier.GEOTAG, Granularity.POI)
        entry = hit[0]
        if cc is not None and entry.country != cc:
            return ResolvedLocation.unresolved()
        return ResolvedLocation(entry.name, pt, Tier.GEOTAG, entry.granularity, entry.country)

    for tier, name in ((Tier.CONTENT, content_name), (Tier.PROFILE, record.profile_location)):
        if not name or name.strip().casefold() == NO_LOCATION.casefold():
            continue
        entry = lookup(gazetteer, name, cc, restrict=True)
        if entry is None:
            continue
        return ResolvedLocation(entry.name, entry.point, tier, entry.granularity, entry.country)
    return ResolvedLocation.unresolved()
