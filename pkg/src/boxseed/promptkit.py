"""Prompt variants and their response schemas.

Each variant ships as a UTF-8 template under ``prompts/``: a header comment
(every line before the system marker, dropped at load), a ``## SYSTEM PROMPT``
section, and a ``## USER PROMPT`` section. ``{{N_IMAGES}}`` is the only
substitution token. Templates are frozen canonical text — golden tests pin
their bytes so cached model responses stay valid across builds.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from enum import Enum
from importlib import resources

from .sampler import SamplerConfig


class PromptVariant(Enum):
    """The five prompt designs, in ascending order of guidance."""

    BASIC = "basic"
    VEHICLE_TYPE = "vehicle_type"
    TYPE_SIZE_CLASS = "type_size_class"
    VMMGR = "vmmgr"
    REFINED_VMMGR = "refined_vmmgr"


# Canonical presentation order for ablation reports.
VARIANT_ORDER: tuple[PromptVariant, ...] = tuple(PromptVariant)


class FieldKind(Enum):
    BOOLEAN = "boolean"
    STRING = "string"
    YEAR_RANGE = "year_range"
    VEHICLE_TYPE = "vehicle_type"
    FLOAT = "float"
    MODIFICATION = "modification"


@dataclass(frozen=True)
class SchemaField:
    """One key of a variant's JSON response template."""

    name: str
    kind: FieldKind
    # Every field in every variant is nullable; the model may answer null
    # whenever it is unsure. Kept explicit so downstream code never has to
    # special-case a required field appearing later.
    nullable: bool = True


DIMENSION_FIELDS = ("length_m", "width_m", "height_m")

_DIM_SCHEMA = tuple(SchemaField(name, FieldKind.FLOAT) for name in DIMENSION_FIELDS)

_TYPE_FIELD = SchemaField("vehicle_type", FieldKind.VEHICLE_TYPE)
_SIZE_CLASS_FIELD = SchemaField("size_class", FieldKind.STRING)
_VMMGR_FIELDS = (
    SchemaField("make", FieldKind.STRING),
    SchemaField("model", FieldKind.STRING),
    SchemaField("generation_year_range", FieldKind.YEAR_RANGE),
)

RESPONSE_SCHEMAS: dict[PromptVariant, tuple[SchemaField, ...]] = {
    PromptVariant.BASIC: _DIM_SCHEMA,
    PromptVariant.VEHICLE_TYPE: (_TYPE_FIELD, *_DIM_SCHEMA),
    PromptVariant.TYPE_SIZE_CLASS: (_TYPE_FIELD, _SIZE_CLASS_FIELD, *_DIM_SCHEMA),
    PromptVariant.VMMGR: (*_VMMGR_FIELDS, _TYPE_FIELD, _SIZE_CLASS_FIELD, *_DIM_SCHEMA),
    PromptVariant.REFINED_VMMGR: (
        SchemaField("significantly_occluded", FieldKind.BOOLEAN),
        *_VMMGR_FIELDS,
        _TYPE_FIELD,
        SchemaField("configuration", FieldKind.STRING),
        *_DIM_SCHEMA,
        SchemaField("length_modification", FieldKind.MODIFICATION),
        SchemaField("width_modification", FieldKind.MODIFICATION),
        SchemaField("height_modification", FieldKind.MODIFICATION),
    ),
}


@dataclass(frozen=True)
class PromptBundle:
    variant: PromptVariant
    system_text: str
    user_text: str
    response_schema: tuple[SchemaField, ...]
    max_images: int


_SYSTEM_MARKER = "## SYSTEM PROMPT"
_USER_MARKER = "## USER PROMPT"
_N_IMAGES_TOKEN = "{{N_IMAGES}}"


@functools.lru_cache(maxsize=None)
def template_text(variant: PromptVariant) -> str:
    """Raw template file contents, header comment included."""
    path = resources.files(__package__).joinpath(f"prompts/{variant.value}.txt")
    return path.read_text(encoding="utf-8")


@functools.lru_cache(maxsize=None)
def _template_sections(variant: PromptVariant) -> tuple[str, str]:
    lines = template_text(variant).split("\n")
    try:
        system_at = lines.index(_SYSTEM_MARKER)
        user_at = lines.index(_USER_MARKER)
    except ValueError as exc:
        raise ValueError(f"template {variant.value!r} is missing a section marker") from exc
    if user_at < system_at:
        raise ValueError(f"template {variant.value!r} has sections out of order")
    system = "\n".join(lines[system_at + 1 : user_at]).strip("\n")
    user = "\n".join(lines[user_at + 1 :]).strip("\n")
    if not system or not user:
        raise ValueError(f"template {variant.value!r} has an empty section")
    return system, user


def build_prompt(variant: PromptVariant, config: SamplerConfig) -> PromptBundle:
    """Assemble the (system, user, schema, image budget) bundle for a variant.

    Deterministic for a given (variant, config); the only templated value is
    the image count.
    """
    system, user = _template_sections(variant)
    n = str(config.n_images)
    return PromptBundle(
        variant=variant,
        system_text=system.replace(_N_IMAGES_TOKEN, n),
        user_text=user.replace(_N_IMAGES_TOKEN, n),
        response_schema=RESPONSE_SCHEMAS[variant],
        max_images=config.n_images,
    )
