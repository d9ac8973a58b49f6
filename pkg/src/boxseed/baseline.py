"""Non-VLM oracle baseline: fixed per-type dimensions from size-class tables.

The oracle reads each track's ground-truth vehicle type and emits the mean of
that type's size-class entries; it looks at no images and never abstains.
``other`` vehicles get the mean box over all main-type outputs of the same
run. The packaged table averages public 2013-model spec-sheet dimensions of
high-volume vehicles per size class (sources cited per entry in the data
file).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from .core import MAIN_VEHICLE_TYPES, Dimensions, VehicleType, VehicleTrack
from .evaluation import DimPrediction, PredictionSource
from .parsing import VlmResponse

BASELINE_VARIANT = "baseline"


class UnknownTypeError(ValueError):
    """No table entry can exist for this type; use fallback_dims."""


class EmptyPredictionSetError(ValueError):
    """fallback_dims needs at least one donor output."""


@dataclass(frozen=True)
class SizeClassEntry:
    size_class: str
    dims: Dimensions
    source: str = ""


@dataclass(frozen=True)
class SizeClassTable:
    entries: Mapping[VehicleType, tuple[SizeClassEntry, ...]]

    def __post_init__(self) -> None:
        for vtype in MAIN_VEHICLE_TYPES:
            if not self.entries.get(vtype):
                raise ValueError(f"size-class table has no entries for {vtype.value}")
        if VehicleType.OTHER in self.entries:
            raise ValueError("size-class table must not define entries for 'other'")


def load_size_class_table(path: str | Path | None = None) -> SizeClassTable:
    """Load a table from JSON; with no path, the packaged table."""
    if path is None:
        text = resources.files(__package__).joinpath("data/size_classes.json").read_text(
            encoding="utf-8"
        )
    else:
        text = Path(path).read_text(encoding="utf-8")
    raw = json.loads(text)
    if not isinstance(raw, dict):
        raise ValueError("size-class table must be a JSON object")
    entries: dict[VehicleType, tuple[SizeClassEntry, ...]] = {}
    for type_name, rows in raw.items():
        vtype = VehicleType(type_name)
        parsed = []
        for row in rows:
            dims = row["dims"]
            parsed.append(
                SizeClassEntry(
                    size_class=row["class"],
                    dims=Dimensions(float(dims[0]), float(dims[1]), float(dims[2])),
                    source=str(row.get("source", "")),
                )
            )
        entries[vtype] = tuple(parsed)
    return SizeClassTable(entries)


def _mean_dims(dims_list: Sequence[Dimensions]) -> Dimensions:
    n = len(dims_list)
    return Dimensions(
        sum(d.length_m for d in dims_list) / n,
        sum(d.width_m for d in dims_list) / n,
        sum(d.height_m for d in dims_list) / n,
    )


def baseline_dims(vtype: VehicleType, table: SizeClassTable) -> Dimensions:
    """Per-dimension mean over the type's size-class entries."""
    if vtype is VehicleType.OTHER:
        raise UnknownTypeError("no size classes exist for 'other'; use fallback_dims")
    return _mean_dims([entry.dims for entry in table.entries[vtype]])


def fallback_dims(main_type_outputs: Sequence[Dimensions]) -> Dimensions:
    """Mean box over the run's main-type outputs (the ``other`` fallback)."""
    if not main_type_outputs:
        raise EmptyPredictionSetError("no main-type outputs to average")
    return _mean_dims(main_type_outputs)


def run_baseline(tracks: Sequence[VehicleTrack], table: SizeClassTable) -> list[DimPrediction]:
    """Emit one prediction per labeled track; prediction rate is 1.0 by construction.

    ``other`` fallbacks are computed from this run's main-type outputs, so
    they follow the evaluation set's type mix.
    """
    for track in tracks:
        if track.label is None:
            raise ValueError(f"track {track.track_id!r} has no label; baseline needs vehicle_type")

    source = PredictionSource(variant=BASELINE_VARIANT, backend="size_class_table")
    main_outputs: list[Dimensions] = []
    resolved: list[tuple[VehicleTrack, Dimensions | None]] = []
    for track in tracks:
        vtype = track.label.vehicle_type
        if vtype is VehicleType.OTHER:
            resolved.append((track, None))
            continue
        dims = baseline_dims(vtype, table)
        main_outputs.append(dims)
        resolved.append((track, dims))

    predictions = []
    for track, dims in resolved:
        if dims is None:
            dims = fallback_dims(main_outputs)
        predictions.append(
            DimPrediction(
                track_id=track.track_id,
                dims=dims,
                imputed=False,
                source=source,
                response=VlmResponse(vehicle_type=track.label.vehicle_type, dims=dims),
            )
        )
    return predictions
