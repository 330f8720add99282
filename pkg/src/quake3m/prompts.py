"""Prompt rendering and model-output parsing.

Rendering is pure string substitution over :mod:`quake3m.templates`. Parsing
runs one repair pipeline for all three prompt kinds: strip code fences,
locate a balanced ``{...}`` object, decode it (with light repairs for
single quotes, trailing or missing commas, bare keys), then coerce and
validate the fields.
"""

from __future__ import annotations

import ast
import json
import math
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any

from . import templates
from .corpus import TweetRecord
from .geo import EventConfig
from .mllm import ChatRequest, ImagePart, ImageTooLargeError

REASK_SUFFIX = "Return only the JSON object."
MIN_LEVEL, MAX_LEVEL = 0, 10
DAMAGE_TYPES = ("Interior", "Exterior", "Both", "None")
CANONICAL_KEYS = ("human_impact", "damage_type", "damage_level", "reasoning", "confidence")


class Modality(str, Enum):
    TEXT_ONLY = "text_only"
    IMAGE_ONLY = "image_only"
    FUSION = "fusion"

    @property
    def needs_image(self) -> bool:
        return self is not Modality.TEXT_ONLY

    @classmethod
    def parse(cls, value: str) -> "Modality":
        aliases = {"text": cls.TEXT_ONLY, "image": cls.IMAGE_ONLY}
        return aliases.get(value) or cls(value)


@dataclass(frozen=True)
class PromptVersion:
    version_id: str
    template_text: str
    tweet_block: str  # removed for image-only requests
    image_block: str  # removed for text-only requests

    def text_for(self, modality: Modality) -> str:
        if modality is Modality.FUSION:
            return self.template_text
        if modality is Modality.TEXT_ONLY:
            return self.template_text.replace(self.image_block, "", 1)
        if self.version_id == "v1":
            return templates.IMAGE_ONLY_PROMPT
        return self.template_text.replace(self.tweet_block, "", 1)


PROMPT_VERSIONS: dict[str, PromptVersion] = {
    v.version_id: v
    for v in (
        PromptVersion(
            "v1", templates.TEXT_IMAGE_FUSION_PROMPT,
            "Text Description:\n{tweet}\n\n",
            "Image Description:\nPlease analyze the image to assess the severity of the earthquake's damage "
            "based on MMI Scale. \n\n",
        ),
        PromptVersion(
            "v2", templates.PROMPT_V2,
            "Text Description:\n{tweet}\n\n",
            "Image Description:\nPlease analyze the image to assess visible earthquake damage.\n\n",
        ),
        PromptVersion(
            "v3", templates.PROMPT_V3,
            "Text Description:\n{tweet}\n\n",
            "Image Description:\nAnalyze for any visible earthquake damage-structural collapse, debris, "
            "road cracks, etc.\n\n",
        ),
        PromptVersion("v4", templates.PROMPT_V4, "Text: {tweet}\n", "Image: [image provided]\n"),
        PromptVersion("v5", templates.PROMPT_V5, "Tweet: {tweet}\n", "Image: [Analyze the image]\n"),
        PromptVersion("v6", templates.PROMPT_V6, "Tweet: {tweet}\n", "Image: [Analyze the image]\n"),
        PromptVersion("v7", templates.PROMPT_V7, "Tweet Content: {tweet}\n", "Image Content: [image provided]\n"),
    )
}


def get_version(version: str | PromptVersion) -> PromptVersion:
    if isinstance(version, PromptVersion):
        return version
    key = version.lower()
    if not key.startswith("v"):
        key = "v" + key
    try:
        return PROMPT_VERSIONS[key]
    except KeyError:
        raise ValueError(f"unknown prompt version {version!r}; expected v1..v7") from None


class MissingImageError(ValueError):
    """An image-bearing modality was requested for a post without usable images."""


# --------------------------------------------------------------------------
# rendering

def _coord(value: float | None) -> str:
    return "None" if value is None else repr(float(value))


def render_location_prompt(record: TweetRecord, event: EventConfig | None = None) -> str:
    lat, lon = record.geotag if record.geotag is not None else (None, None)
    text = templates.LOCATION_PROMPT
    if event is not None and event.region_label:
        text = text.replace("U.S.", event.region_label)
    return text.format(
        longitude=_coord(lon),
        latitude=_coord(lat),
        tweet=record.text,
        location=record.profile_location if record.profile_location else "None",
    )


def render_event_prompt(record: TweetRecord, event: EventConfig) -> str:
    return templates.EVENT_PROMPT.format(event=event.event_name, tweet=record.text)


def location_request(record: TweetRecord, event: EventConfig | None = None, **kw) -> ChatRequest:
    return ChatRequest((render_location_prompt(record, event),), purpose="location", **kw)


def event_request(record: TweetRecord, event: EventConfig, **kw) -> ChatRequest:
    return ChatRequest((render_event_prompt(record, event),), purpose="event", **kw)


def render_damage_prompt(
    record: TweetRecord,
    modality: Modality | str,
    version: PromptVersion | str = "v1",
    *,
    media_root: str | Path | None = None,
    temperature: float = 0.0,
    max_output_tokens: int = 1024,
) -> ChatRequest:
    """Build the damage-assessment request for one post.

    Raises MissingImageError when the modality needs an image and the post
    has none (or none can be read).
    """
    modality = Modality.parse(modality) if isinstance(modality, str) else modality
    version = get_version(version)
    images: list[ImagePart] = []
    if modality.needs_image:
        if not record.images:
            raise MissingImageError(f"tweet {record.id}: {modality.value} requires an image")
        for ref in record.images:
            try:
                images.append(ImagePart.load(ref.uri, media_root))
            except (OSError, ImageTooLargeError) as exc:
                raise MissingImageError(f"tweet {record.id}: cannot read image {ref.uri}: {exc}") from exc
    text = version.text_for(modality).format(tweet=record.text)
    return ChatRequest(
        (text, *images),
        temperature=temperature,
        max_output_tokens=max_output_tokens,
        purpose="damage",
    )


# --------------------------------------------------------------------------
# parsing

class ParseError(ValueError):
    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


class NoObjectFoundError(ParseError):
    pass


class SchemaViolationError(ParseError):
    pass


@dataclass(frozen=True)
class DamageVerdict:
    human_impact: int
    damage_type: str
    damage_level: int
    confidence: float
    reasoning: str
    voted_candidate: str | None = None

    def __post_init__(self):
        if self.human_impact not in (0, 1):
            raise ValueError("human_impact must be 0 or 1")
        if self.damage_type not in DAMAGE_TYPES:
            raise ValueError(f"bad damage_type {self.damage_type!r}")
        if not MIN_LEVEL <= self.damage_level <= MAX_LEVEL:
            raise ValueError(f"damage_level {self.damage_level} outside {MIN_LEVEL}..{MAX_LEVEL}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence outside [0, 1]")

    @property
    def mmi(self) -> int:
        """Level on the MMI scale; 0 ("no damage signal") counts as MMI 1."""
        return max(self.damage_level, 1)

    def to_canonical(self) -> dict:
        return {
            "human_impact": self.human_impact,
            "damage_type": self.damage_type,
            "damage_level": self.damage_level,
            "reasoning": self.reasoning,
            "confidence": self.confidence,
        }


@dataclass(frozen=True)
class LocationVerdict:
    location: str
    reasoning: str = ""

    @property
    def is_none(self) -> bool:
        return self.location == "No"


@dataclass(frozen=True)
class EventVerdict:
    is_event_related: str  # "Yes" | "No"
    reasoning: str = ""

    @property
    def related(self) -> bool:
        return self.is_event_related == "Yes"


_FENCE_RE = re.compile(r"```[ \t]*([A-Za-z0-9_-]*)[ \t]*\n?(.*?)(?:```|\Z)", re.S)
_TRAILING_COMMA_RE = re.compile(r",(\s*[}\]])")
_MISSING_COMMA_RE = re.compile(r'(["\d\]}]|true|false|null)([ \t]*\r?\n\s*)(")')
_BARE_KEY_RE = re.compile(r'([{,]\s*)([A-Za-z_][A-Za-z0-9_ ]*?)(\s*:)')
_SMART = str.maketrans({"“": '"', "”": '"', "‘": "'", "’": "'"})
_MAX_CANDIDATES = 8


def _as_text(raw) -> str:
    if isinstance(raw, (bytes, bytearray)):
        return bytes(raw).decode("utf-8", errors="replace")
    return "" if raw is None else str(raw)


def _balanced_spans(text: str):
    """Yield (start, end) of balanced brace spans, string-literal aware."""
    starts = 0
    pos = text.find("{")
    while pos != -1 and starts < _MAX_CANDIDATES:
        starts += 1
        depth, quote, esc = 0, None, False
        for i in range(pos, len(text)):
            ch = text[i]
            if quote:
                if esc:
                    esc = False
                elif ch == "\\":
                    esc = True
                elif ch == quote or ch == "\n" and quote == "'":
                    quote = None
            elif ch in "\"'":
                # an apostrophe inside a bare word is not a quote
                if ch == "'" and i > 0 and text[i - 1].isalnum():
                    continue
                quote = ch
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    yield pos, i + 1
                    break
        pos = text.find("{", pos + 1)


def _decode(candidate: str) -> Any:
    try:
        return json.loads(candidate)
    except (json.JSONDecodeError, RecursionError):
        pass
    fixed = candidate.translate(_SMART)
    fixed = _TRAILING_COMMA_RE.sub(r"\1", fixed)
    fixed = _MISSING_COMMA_RE.sub(r"\1,\2\3", fixed)
    try:
        return json.loads(fixed)
    except (json.JSONDecodeError, RecursionError):
        pass
    quoted = _BARE_KEY_RE.sub(lambda m: f'{m.group(1)}"{m.group(2).strip()}"{m.group(3)}', fixed)
    for attempt in (quoted, fixed):
        try:
            return json.loads(attempt)
        except (json.JSONDecodeError, RecursionError):
            pass
    # Python-literal style output: single quotes, True/False/None
    for attempt in (fixed, re.sub(r"\btrue\b", "True", re.sub(r"\bfalse\b", "False",
                                                             re.sub(r"\bnull\b", "None", fixed)))):
        try:
            return ast.literal_eval(attempt)
        except (ValueError, SyntaxError, TypeError, MemoryError, RecursionError):
            pass
    return None


def extract_object(raw) -> dict:
    """Return the first JSON object in a model reply, repairing where possible."""
    text = _as_text(raw)
    sources = []
    for m in _FENCE_RE.finditer(text):
        body = m.group(2)
        if "{" in body:
            sources.append(body)
    sources.append(text)
    seen = set()
    for src in sources:
        for start, end in _balanced_spans(src):
            cand = src[start:end]
            if cand in seen:
                continue
            seen.add(cand)
            obj = _decode(cand)
            if isinstance(obj, dict):
                return {_norm_key(k): v for k, v in obj.items()}
    raise NoObjectFoundError("no parseable JSON object in model output", text)


def _norm_key(key) -> str:
    return re.sub(r"[\s-]+", "_", str(key).strip().lower())


_ROMAN = {"i": 1, "ii": 2, "iii": 3, "iv": 4, "v": 5, "vi": 6, "vii": 7, "viii": 8, "ix": 9, "x": 10}
_YES = {"1", "yes", "y", "true"}
_NO = {"0", "no", "n", "false", "o"}  # "o": the prompts print ("1" or "o")


def _coerce_flag(value, raw: str) -> int:
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, (int, float)) and not isinstance(value, bool) and value in (0, 1):
        return int(value)
    if isinstance(value, str):
        v = value.strip().strip(".").lower()
        if v in _YES:
            return 1
        if v in _NO:
            return 0
    raise SchemaViolationError(f"human_impact must be 0 or 1, got {value!r}", raw)


def _coerce_type(value, raw: str) -> str:
    if value is None:
        return "None"
    if isinstance(value, str):
        v = value.strip().strip(".").lower()
        for t in DAMAGE_TYPES:
            if v == t.lower():
                return t
    raise SchemaViolationError(f"damage_type must be one of {DAMAGE_TYPES}, got {value!r}", raw)


def _coerce_level(value, raw: str) -> int:
    level = None
    if isinstance(value, bool):
        level = None
    elif isinstance(value, int):
        level = value
    elif isinstance(value, float) and math.isfinite(value) and value.is_integer():
        level = int(value)
    elif isinstance(value, str):
        v = value.strip()
        m = re.match(r"^(?:mmi\s*)?(-?\d+)(?:\.0+)?(?!\.?\d)", v, re.I)
        if m:
            level = int(m.group(1))
        else:
            m = re.match(r"^(?:mmi\s*)?([ivx]+)\b", v, re.I)
            if m and m.group(1).lower() in _ROMAN:
                level = _ROMAN[m.group(1).lower()]
    if level is None:
        raise SchemaViolationError(f"damage_level must be an integer, got {value!r}", raw)
    if not MIN_LEVEL <= level <= MAX_LEVEL:
        raise SchemaViolationError(f"damage_level {level} outside {MIN_LEVEL}..{MAX_LEVEL}", raw)
    return level


def _coerce_confidence(value, raw: str) -> float:
    conf = None
    if isinstance(value, bool):
        conf = None
    elif isinstance(value, (int, float)):
        conf = float(value)
    elif isinstance(value, str):
        m = re.match(r"^\s*(-?\d*\.?\d+)\s*(%?)", value)
        if m:
            conf = float(m.group(1)) / (100.0 if m.group(2) else 1.0)
    if conf is None or not math.isfinite(conf):
        raise SchemaViolationError(f"confidence must be a number in [0, 1], got {value!r}", raw)
    return min(1.0, max(0.0, conf))


def _require(obj: dict, key: str, raw: str):
    if key not in obj:
        raise SchemaViolationError(f"missing field {key!r}", raw)
    return obj[key]


_VOTED_RE = re.compile(r"voted candidate\s*[:=]\s*([^\n.;]+)", re.I)


def parse_damage_response(raw) -> DamageVerdict:
    """Parse a damage-assessment reply into a validated verdict.

    Raises NoObjectFoundError or SchemaViolationError; both carry ``raw``.
    """
    text = _as_text(raw)
    obj = extract_object(text)
    reasoning = _require(obj, "reasoning", text)
    if not isinstance(reasoning, str):
        raise SchemaViolationError(f"reasoning must be a string, got {type(reasoning).__name__}", text)
    voted = obj.get("voted_candidate")
    if not isinstance(voted, str):
        m = _VOTED_RE.search(reasoning)
        voted = m.group(1).strip() if m else None
    return DamageVerdict(
        human_impact=_coerce_flag(_require(obj, "human_impact", text), text),
        damage_type=_coerce_type(_require(obj, "damage_type", text), text),
        damage_level=_coerce_level(_require(obj, "damage_level", text), text),
        confidence=_coerce_confidence(_require(obj, "confidence", text), text),
        reasoning=reasoning,
        voted_candidate=voted,
    )


def _reasoning(obj: dict) -> str:
    r = obj.get("reasoning", "")
    return r if isinstance(r, str) else json.dumps(r, ensure_ascii=False)


def parse_location_response(raw) -> LocationVerdict:
    text = _as_text(raw)
    obj = extract_object(text)
    loc = _require(obj, "location", text)
    if loc is None:
        loc = "No"
    if not isinstance(loc, str):
        raise SchemaViolationError(f"location must be a string, got {loc!r}", text)
    loc = loc.strip().strip('"').strip()
    if not loc:
        raise SchemaViolationError("location is empty", text)
    if loc.rstrip(".").lower() == "no":
        loc = "No"
    return LocationVerdict(loc, _reasoning(obj))


def parse_event_response(raw) -> EventVerdict:
    text = _as_text(raw)
    try:
        obj = extract_object(text)
    except NoObjectFoundError:
        # the prompt also says "Respond only with Yes/No"
        bare = text.strip().strip(".!\"'").lower()
        if bare in ("yes", "no"):
            return EventVerdict(bare.capitalize())
        raise
    value = _require(obj, "is_event_related", text)
    if isinstance(value, bool):
        token = "Yes" if value else "No"
    elif isinstance(value, str) and value.strip().strip(".").lower() in ("yes", "no", "true", "false"):
        token = "Yes" if value.strip().strip(".").lower() in ("yes", "true") else "No"
    else:
        raise SchemaViolationError(f"is_event_related must be Yes or No, got {value!r}", text)
    return EventVerdict(token, _reasoning(obj))
