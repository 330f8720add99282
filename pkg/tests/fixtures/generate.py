"""Regenerate the deterministic test fixtures in this directory.

    python3 tests/fixtures/generate.py

Outputs: filter_200.jsonl, mock_100.jsonl, mock_100.truth.json, media/window.png.
Planted labels are checked against an independent word-split oracle before
anything is written.
"""

from __future__ import annotations

import json
import random
import re
import struct
import zlib
from pathlib import Path

HERE = Path(__file__).parent
DATA = HERE.parent.parent / "src" / "quake3m" / "data"


def _terms(lang: str) -> set[str]:
    lines = (DATA / f"terms.{lang}.txt").read_text(encoding="utf-8").splitlines()
    return {t.strip() for t in lines if t.strip() and not t.startswith("#")}


def oracle_has_term(text: str, en: set[str], ja: set[str]) -> bool:
    # independent of the library matcher: split on non-letters, compare whole words
    words = {w.lower() for w in re.split(r"[^A-Za-z]+", text) if w}
    return bool(words & {t.lower() for t in en}) or any(t in text for t in ja)


EN_POS = [
    "The quake {t} our kitchen windows",
    "Lots of {t} along Main St after the shaking",
    "{T}!! the garage looks bad",
    "Just saw the {t} near the freeway #earthquake",
    "Power {t} reported across town after the tremor",
    "is anyone else seeing {t} in the old church walls?",
]
EN_POS_TERMS = ["damage", "cracked", "collapsed", "rubble", "outage", "shattered", "broken",
                "fissures", "destroyed", "leaking", "crack", "wrecked", "injured", "blackout"]
JA_POS = ["地震で家の壁に{t}が入った", "停電なう、{t}がひどい", "{t}の情報があります", "駅の近くで{t}を確認"]
JA_POS_TERMS = ["ひび", "損傷", "停電", "火事", "瓦礫", "土砂崩れ", "崩壊", "けが"]
MIXED_POS = ["Ridgecrest 地震 {t} everywhere", "福島 earthquake: {t}が心配", "{t} in 仙台 after the quake"]

EN_NEG = [
    "felt a strong shake here, everyone ok",
    "wow that was a long one",
    "the diesel generator kicked in fine",
    "Firefox crashed? no, just my nerves",  # "crashed" is a term: replaced below
    "is the quake over yet",
    "saferoom drill postponed",
    "dietary advice for stressful days",
    "cracker crumbs everywhere lol",
    "that was the biggest shaking I have felt",
    "heading home now, roads look normal",
]
EN_NEG[3] = "Firefox froze? no, just my nerves"
JA_NEG = ["地震だ、揺れた", "今の揺れ大きかった", "みんな大丈夫？", "長い揺れだった", "震度4くらいかな"]


def make_filter_fixture(rng: random.Random, en: set[str], ja: set[str]) -> list[dict]:
    rows = []
    for i in range(120):
        kind = i % 3
        if kind == 0:
            t = rng.choice(EN_POS_TERMS)
            tmpl = rng.choice(EN_POS)
            text = tmpl.format(t=t, T=t.upper())
        elif kind == 1:
            text = rng.choice(JA_POS).format(t=rng.choice(JA_POS_TERMS))
        else:
            pool = EN_POS_TERMS if rng.random() < 0.5 else JA_POS_TERMS
            text = rng.choice(MIXED_POS).format(t=rng.choice(pool))
        rows.append({"text": text, "planted": True})
    for i in range(80):
        src = EN_NEG if i % 2 == 0 else JA_NEG
        rows.append({"text": f"{rng.choice(src)} ({i})", "planted": False})
    rng.shuffle(rows)
    out = []
    for i, r in enumerate(rows):
        assert oracle_has_term(r["text"], en, ja) == r["planted"], r
        out.append({"id": f"f{i:03d}", "created_at": "2019-07-06T03:20:00Z", "text": r["text"],
                    "planted": r["planted"]})
    return out


CONTENT_CITIES = ["El Monte", "Pasadena", "Ridgecrest", "Bakersfield", "Lancaster", "Trona"]
GEOTAG_POINTS = [(35.6225, -117.6709), (34.0686, -118.0276), (35.3733, -119.0187),
                 (34.6868, -118.1542), (35.7644, -117.3728), (34.1478, -118.1445)]


def make_mock_100(rng: random.Random):
    records, truth = [], {"levels": {}, "locations": {}, "events": {}, "broken": []}
    for i in range(100):
        tid = f"t{i:04d}"
        rec = {"id": tid, "created_at": "2019-07-06T03:30:00Z"}
        slot = i % 10
        text = f"[{tid}] earthquake damage report"
        if slot == 0:
            truth["events"][tid] = "No"
            text = f"[{tid}] this debate is a political earthquake, total damage"
            rec["lat"], rec["lon"] = GEOTAG_POINTS[i % len(GEOTAG_POINTS)]
        elif slot == 1:
            truth["locations"][tid] = "No"
        elif slot in (2, 3):
            city = CONTENT_CITIES[i % len(CONTENT_CITIES)]
            truth["locations"][tid] = city
            text = f"[{tid}] cracked walls in {city} after the quake"
        elif slot == 4:
            truth["locations"][tid] = "No"
            rec["user_location"] = "Los Angeles, CA"
        else:
            lat, lon = GEOTAG_POINTS[i % len(GEOTAG_POINTS)]
            rec["lat"], rec["lon"] = round(lat + rng.uniform(-0.01, 0.01), 5), round(lon + rng.uniform(-0.01, 0.01), 5)
        rec["text"] = text
        truth["levels"][tid] = rng.randint(1, 8)
        records.append(rec)
    truth["broken"] = ["t0015", "t0045", "t0075"]
    return records, truth


def tiny_png(rgb=(200, 60, 60), size=4) -> bytes:
    raw = b"".join(b"\x00" + bytes(rgb) * size for _ in range(size))

    def chunk(kind, data):
        return struct.pack(">I", len(data)) + kind + data + struct.pack(">I", zlib.crc32(kind + data) & 0xFFFFFFFF)

    ihdr = struct.pack(">IIBBBBB", size, size, 8, 2, 0, 0, 0)
    return b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr) + chunk(b"IDAT", zlib.compress(raw)) + chunk(b"IEND", b"")


def _write_jsonl(path: Path, rows) -> None:
    path.write_text("".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows), encoding="utf-8")


def main() -> None:
    en, ja = _terms("en"), _terms("ja")
    _write_jsonl(HERE / "filter_200.jsonl", make_filter_fixture(random.Random(200), en, ja))
    records, truth = make_mock_100(random.Random(100))
    _write_jsonl(HERE / "mock_100.jsonl", records)
    (HERE / "mock_100.truth.json").write_text(json.dumps(truth, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    (HERE / "media").mkdir(exist_ok=True)
    (HERE / "media" / "window.png").write_bytes(tiny_png())


if __name__ == "__main__":
    main()
