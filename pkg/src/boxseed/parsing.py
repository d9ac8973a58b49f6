"""Typed parsing of model JSON output, plus VMMGR match scoring.

``parse_response`` is total: any byte string maps to exactly one of
Prediction, Abstention, or ParseFailure, never an exception. Classification
rules, in order: an occlusion flag set true wins over everything else; any
null dimension is an abstention; dimension magnitudes past the sanity bound
are treated as hallucinations and fail the parse.
"""

from __future__ import annotations

import json
import math
import re
import string
from dataclasses import dataclass, fields as dataclass_fields
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence, Union

from .core import (
    Dimensions,
    GroundTruthLabel,
    InvalidYearRangeError,
    UnknownVehicleTypeError,
    VehicleType,
    YearRange,
    parse_vehicle_type,
)
from .promptkit import (
    DIMENSION_FIELDS,
    RESPONSE_SCHEMAS,
    FieldKind,
    PromptVariant,
    SchemaField,
)

# Anything longer/wider/taller than this is a hallucinated magnitude, not a
# vehicle in a drivable scene.
MAX_DIM_M = 30.0


class MissingTruthError(ValueError):
    """Ground truth lacks the make/model/generation fields needed to score."""


class Modification(Enum):
    INCREASED = "increased"
    DECREASED = "decreased"


class AbstentionReason(Enum):
    OCCLUDED = "occluded"
    NULL_DIMS = "null_dims"
    NO_INPUT = "no_input"


@dataclass(frozen=True)
class VlmResponse:
    """Typed form of the model's JSON answer, shared across all variants."""

    significantly_occluded: bool = False
    make: str | None = None
    model: str | None = None
    generation_year_range: YearRange | None = None
    vehicle_type: VehicleType | None = None
    configuration: str | None = None
    size_class: str | None = None
    dims: Dimensions | None = None
    length_modification: Modification | None = None
    width_modification: Modification | None = None
    height_modification: Modification | None = None

    def __post_init__(self) -> None:
        if self.significantly_occluded:
            others = [
                getattr(self, f.name)
                for f in dataclass_fields(self)
                if f.name != "significantly_occluded"
            ]
            if any(v is not None for v in others):
                raise ValueError("an occluded response must carry no other fields")
        if self.dims is not None:
            for name, value in zip(DIMENSION_FIELDS, self.dims.as_tuple()):
                if value > MAX_DIM_M:
                    raise ValueError(f"{name}={value} exceeds the {MAX_DIM_M} m sanity bound")


@dataclass(frozen=True)
class Prediction:
    response: VlmResponse

    def __post_init__(self) -> None:
        if self.response.dims is None:
            raise ValueError("a prediction requires dimensions")


@dataclass(frozen=True)
class Abstention:
    reason: AbstentionReason


@dataclass(frozen=True)
class ParseFailure:
    detail: str


ParsedOutcome = Union[Prediction, Abstention, ParseFailure]


_YEAR_RANGE_RE = re.compile(r"^(\d{4})\s*[-–]\s*(\d{4})$")
_SINGLE_YEAR_RE = re.compile(r"^(\d{4})$")


def parse_year_range(s: str) -> YearRange:
    """Parse "YYYY-YYYY" (hyphen or en dash) or a single "YYYY"."""
    if not isinstance(s, str):
        raise InvalidYearRangeError(f"not a string: {s!r}")
    text = s.strip()
    m = _YEAR_RANGE_RE.match(text)
    if m:
        return YearRange(int(m.group(1)), int(m.group(2)))
    m = _SINGLE_YEAR_RE.match(text)
    if m:
        year = int(m.group(1))
        return YearRange(year, year)
    raise InvalidYearRangeError(f"not a year range: {s!r}")


class _CoercionError(ValueError):
    pass


_BOOL_STRINGS = {"true": True, "false": False}
_MODIFICATION_VALUES = {m.value: m for m in Modification}


def _coerce(field: SchemaField, value: object) -> object:
    """Map one raw JSON value onto the field's typed form.

    Strict about type confusion (a list where a float belongs is a parse
    failure) but lenient where the information is peripheral: an unreadable
    generation string degrades to None rather than voiding usable dimensions.
    """
    if value is None:
        return False if field.kind is FieldKind.BOOLEAN else None
    if field.kind is FieldKind.BOOLEAN:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.strip().lower() in _BOOL_STRINGS:
            return _BOOL_STRINGS[value.strip().lower()]
        raise _CoercionError(f"expected a boolean, got {value!r}")
    if field.kind is FieldKind.FLOAT:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise _CoercionError(f"expected a number, got {value!r}")
        number = float(value)
        if not math.isfinite(number):
            raise _CoercionError(f"non-finite number: {value!r}")
        return number
    if field.kind is FieldKind.STRING:
        if isinstance(value, str):
            return value
        raise _CoercionError(f"expected a string, got {value!r}")
    if field.kind is FieldKind.VEHICLE_TYPE:
        if not isinstance(value, str):
            raise _CoercionError(f"expected a vehicle type string, got {value!r}")
        try:
            return parse_vehicle_type(value)
        except UnknownVehicleTypeError as exc:
            raise _CoercionError(str(exc)) from exc
    if field.kind is FieldKind.YEAR_RANGE:
        if isinstance(value, bool):
            raise _CoercionError(f"expected a year range, got {value!r}")
        if isinstance(value, int):
            value = str(value)
        if not isinstance(value, str):
            raise _CoercionError(f"expected a year range string, got {value!r}")
        try:
            return parse_year_range(value)
        except InvalidYearRangeError:
            return None
    if field.kind is FieldKind.MODIFICATION:
        if isinstance(value, str) and value.strip().lower() in _MODIFICATION_VALUES:
            return _MODIFICATION_VALUES[value.strip().lower()]
        raise _CoercionError(f"expected 'increased'/'decreased'/null, got {value!r}")
    raise AssertionError(f"unhandled field kind {field.kind}")


_JSON_DECODER = json.JSONDecoder()


def _first_json_object(text: str) -> dict | None:
    """First decodable JSON object in the text, fences and prose tolerated."""
    pos = text.find("{")
    while pos != -1:
        try:
            value, _ = _JSON_DECODER.raw_decode(text, pos)
        except json.JSONDecodeError:
            value = None
        if isinstance(value, dict):
            return value
        pos = text.find("{", pos + 1)
    return None


def _fragment(text: str, limit: int = 80) -> str:
    snippet = text.strip().replace("\n", " ")
    return snippet[:limit] + ("..." if len(snippet) > limit else "")


def parse_response(raw_text: str, variant: PromptVariant) -> ParsedOutcome:
    """Classify arbitrary model output against the variant's schema."""
    if not isinstance(raw_text, str):
        return ParseFailure(f"expected text, got {type(raw_text).__name__}")
    obj = _first_json_object(raw_text)
    if obj is None:
        return ParseFailure(f"no JSON object found in: {_fragment(raw_text)!r}")

    values: dict[str, object] = {}
    for field in RESPONSE_SCHEMAS[variant]:
        try:
            values[field.name] = _coerce(field, obj.get(field.name))
        except _CoercionError as exc:
            return ParseFailure(f"field {field.name!r}: {exc}")

    if values.get("significantly_occluded"):
        return Abstention(AbstentionReason.OCCLUDED)

    dim_values = [values.pop(name, None) for name in DIMENSION_FIELDS]
    if any(v is None for v in dim_values):
        return Abstention(AbstentionReason.NULL_DIMS)

    values.pop("significantly_occluded", None)
    try:
        dims = Dimensions(*dim_values)  # type: ignore[arg-type]
        response = VlmResponse(dims=dims, **values)  # type: ignore[arg-type]
    except ValueError as exc:
        return ParseFailure(str(exc))
    return Prediction(response)


def _field_value(response: VlmResponse, field: SchemaField) -> object:
    if field.name in DIMENSION_FIELDS:
        if response.dims is None:
            return None
        return dict(zip(DIMENSION_FIELDS, response.dims.as_tuple()))[field.name]
    value = getattr(response, field.name)
    if isinstance(value, (VehicleType, Modification)):
        return value.value
    if isinstance(value, YearRange):
        return str(value)
    return value


def serialize_response(
    response: VlmResponse, variant: PromptVariant = PromptVariant.REFINED_VMMGR
) -> str:
    """Render a response as the variant's JSON document, keys in schema order.

    Raises ValueError when the response holds information the variant cannot
    express (so nothing is silently dropped). parse_response inverts this for
    any representable response.
    """
    schema = RESPONSE_SCHEMAS[variant]
    schema_names = {f.name for f in schema}
    for f in dataclass_fields(response):
        if f.name in schema_names or (f.name == "dims" and DIMENSION_FIELDS[0] in schema_names):
            continue
        value = getattr(response, f.name)
        empty = value is False if f.name == "significantly_occluded" else value is None
        if not empty:
            raise ValueError(f"{f.name} is not representable in variant {variant.value!r}")
    payload = {field.name: _field_value(response, field) for field in schema}
    return json.dumps(payload, indent=4)


_PUNCTUATION_TABLE = str.maketrans("", "", string.punctuation)


def normalize_name(s: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace ("F-150" == "f150")."""
    cleaned = s.lower().translate(_PUNCTUATION_TABLE)
    return " ".join(cleaned.split())


def load_alias_table(path: str | Path) -> dict[str, list[str]]:
    """Load a canonical-name → aliases map from JSON."""
    with Path(path).open(encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError("alias table must be a JSON object")
    table: dict[str, list[str]] = {}
    for canonical, aliases in raw.items():
        if not isinstance(canonical, str) or not isinstance(aliases, list):
            raise ValueError(f"bad alias entry for {canonical!r}")
        table[canonical] = [str(a) for a in aliases]
    return table


def _canonicalizer(aliases: Mapping[str, Sequence[str]] | None):
    if not aliases:
        return lambda name: name
    reverse: dict[str, str] = {}
    for canonical, names in aliases.items():
        target = normalize_name(canonical)
        reverse[target] = target
        for name in names:
            reverse[normalize_name(name)] = target
    return lambda name: reverse.get(name, name)


def vmmgr_match(
    pred: VlmResponse,
    truth: GroundTruthLabel,
    *,
    aliases: Mapping[str, Sequence[str]] | None = None,
    generation_mode: str = "overlap",
) -> bool:
    """Score a make/model/generation identification against ground truth.

    Names are compared after normalization and optional alias resolution.
    Generations compare by interval overlap by default ("exact" requires
    equal ranges); sources disagree on exact generation boundary years, so
    overlap is the fairer default.
    """
    if generation_mode not in ("overlap", "exact"):
        raise ValueError(f"unknown generation_mode {generation_mode!r}")
    if truth.make is None or truth.model is None or truth.generation_range is None:
        raise MissingTruthError("truth lacks make/model/generation fields")
    if pred.make is None or pred.model is None or pred.generation_year_range is None:
        return False
    canon = _canonicalizer(aliases)
    if canon(normalize_name(pred.make)) != canon(normalize_name(truth.make)):
        return False
    if canon(normalize_name(pred.model)) != canon(normalize_name(truth.model)):
        return False
    if generation_mode == "exact":
        return pred.generation_year_range == truth.generation_range
    return pred.generation_year_range.overlaps(truth.generation_range)


def modification_flags(pred: VlmResponse) -> bool:
    """True iff the response marked any dimension as modified."""
    return (
        pred.length_modification is not None
        or pred.width_modification is not None
        or pred.height_modification is not None
    )


def response_to_dict(response: VlmResponse) -> dict:
    """Canonical JSON-safe dump of every field (artifact storage form)."""
    out: dict[str, object] = {}
    for f in dataclass_fields(response):
        value = getattr(response, f.name)
        if f.name == "dims":
            for name, number in zip(
                DIMENSION_FIELDS, value.as_tuple() if value is not None else (None,) * 3
            ):
                out[name] = number
            continue
        if isinstance(value, (VehicleType, Modification)):
            value = value.value
        elif isinstance(value, YearRange):
            value = str(value)
        out[f.name] = value
    return out


def response_from_dict(data: Mapping[str, object]) -> VlmResponse:
    """Inverse of response_to_dict; strict, for artifacts we wrote ourselves."""
    dim_values = [data.get(name) for name in DIMENSION_FIELDS]
    dims = None
    if all(v is not None for v in dim_values):
        dims = Dimensions(*(float(v) for v in dim_values))  # type: ignore[arg-type]
    generation = data.get("generation_year_range")
    vtype = data.get("vehicle_type")
    kwargs = {
        "significantly_occluded": bool(data.get("significantly_occluded", False)),
        "make": data.get("make"),
        "model": data.get("model"),
        "generation_year_range": (
            parse_year_range(generation) if generation is not None else None  # type: ignore[arg-type]
        ),
        "vehicle_type": parse_vehicle_type(vtype) if vtype is not None else None,  # type: ignore[arg-type]
        "configuration": data.get("configuration"),
        "size_class": data.get("size_class"),
        "dims": dims,
    }
    for name in ("length_modification", "width_modification", "height_modification"):
        raw = data.get(name)
        kwargs[name] = Modification(raw) if raw is not None else None
    return VlmResponse(**kwargs)  # type: ignore[arg-type]


def outcome_to_dict(outcome: ParsedOutcome) -> dict:
    if isinstance(outcome, Prediction):
        return {"kind": "prediction", "response": response_to_dict(outcome.response)}
    if isinstance(outcome, Abstention):
        return {"kind": "abstention", "reason": outcome.reason.value}
    return {"kind": "parse_failure", "detail": outcome.detail}


def outcome_from_dict(data: Mapping[str, object]) -> ParsedOutcome:
    kind = data.get("kind")
    if kind == "prediction":
        return Prediction(response_from_dict(data["response"]))  # type: ignore[arg-type]
    if kind == "abstention":
        return Abstention(AbstentionReason(data["reason"]))
    if kind == "parse_failure":
        return ParseFailure(str(data.get("detail", "")))
    raise ValueError(f"unknown outcome kind {kind!r}")
