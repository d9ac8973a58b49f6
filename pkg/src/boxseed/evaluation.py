"""Metric aggregation over (prediction, label) pairs.

All aggregation runs in ascending track_id order with plain left-to-right
summation, so results are bit-reproducible run to run regardless of input
order or parallelism upstream. Imputed predictions participate in the error
and IoU metrics (that is what imputation is for) but are excluded from the
modification split and from suspect flagging, where a model response is
required.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .artifacts import InferenceRecord
from .core import Dimensions, GroundTruthLabel, VehicleType
from .geometry import bev_iou_centered
from .parsing import (
    Prediction,
    VlmResponse,
    modification_flags,
    vmmgr_match,
)

DIM_NAMES = ("length", "width", "height")


class NoDonorPredictionsError(ValueError):
    """Imputation is impossible: the run produced no predictions at all."""


class MissingLabelError(KeyError):
    def __init__(self, track_id: str) -> None:
        super().__init__(track_id)
        self.track_id = track_id

    def __str__(self) -> str:
        return f"no ground-truth label for track {self.track_id!r}"


class EmptySetError(ValueError):
    """A metric was requested over zero samples."""


@dataclass(frozen=True)
class PredictionSource:
    variant: str
    backend: str


@dataclass(frozen=True)
class DimPrediction:
    track_id: str
    dims: Dimensions
    imputed: bool
    source: PredictionSource
    response: VlmResponse | None = None

    def __post_init__(self) -> None:
        if self.imputed and self.response is not None:
            raise ValueError("an imputed prediction carries no response")


@dataclass(frozen=True)
class MetricsReport:
    abs_err_lwh: tuple[float, float, float]
    rel_err_lwh: tuple[float, float, float]
    mean_iou: float
    pct_predictions: float
    n_samples: int
    slices: dict[str, "MetricsReport"] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ValueError("a report needs at least one sample")
        if any(v < 0 for v in self.abs_err_lwh + self.rel_err_lwh):
            raise ValueError("errors must be non-negative")
        if not 0.0 <= self.mean_iou <= 1.0:
            raise ValueError("mean_iou must lie in [0, 1]")
        if not 0.0 <= self.pct_predictions <= 1.0:
            raise ValueError("pct_predictions must lie in [0, 1]")

    def with_slices(self, slices: dict[str, "MetricsReport"]) -> "MetricsReport":
        return dataclasses.replace(self, slices=dict(slices))


def impute_abstentions(records: Sequence[InferenceRecord]) -> list[DimPrediction]:
    """Resolve every outcome to dimensions, donor-mean filling non-predictions.

    Output order equals input order and output count equals input count.
    """
    donors = sorted(
        (
            (r.track_id, r.outcome.response.dims)
            for r in records
            if isinstance(r.outcome, Prediction)
        ),
        key=lambda pair: pair[0],
    )
    if not donors:
        raise NoDonorPredictionsError("no predictions to impute from")
    n = len(donors)
    donor_mean = Dimensions(
        sum(dims.length_m for _, dims in donors) / n,
        sum(dims.width_m for _, dims in donors) / n,
        sum(dims.height_m for _, dims in donors) / n,
    )

    out: list[DimPrediction] = []
    for record in records:
        source = PredictionSource(variant=record.variant, backend=record.backend)
        if isinstance(record.outcome, Prediction):
            out.append(
                DimPrediction(
                    track_id=record.track_id,
                    dims=record.outcome.response.dims,
                    imputed=False,
                    source=source,
                    response=record.outcome.response,
                )
            )
        else:
            out.append(
                DimPrediction(
                    track_id=record.track_id,
                    dims=donor_mean,
                    imputed=True,
                    source=source,
                )
            )
    return out


def _label_for(pred: DimPrediction, labels: Mapping[str, GroundTruthLabel]) -> GroundTruthLabel:
    label = labels.get(pred.track_id)
    if label is None:
        raise MissingLabelError(pred.track_id)
    return label


def compute_metrics(
    preds: Sequence[DimPrediction], labels: Mapping[str, GroundTruthLabel]
) -> MetricsReport:
    """Mean abs/rel errors per dimension, mean BEV IoU, prediction rate."""
    if not preds:
        raise EmptySetError("no predictions to score")
    ordered = sorted(preds, key=lambda p: p.track_id)
    abs_sums = [0.0, 0.0, 0.0]
    rel_sums = [0.0, 0.0, 0.0]
    iou_sum = 0.0
    predicted = 0
    for pred in ordered:
        label = _label_for(pred, labels)
        pred_lwh = pred.dims.as_tuple()
        label_lwh = label.dimensions.as_tuple()
        for i in range(3):
            delta = abs(pred_lwh[i] - label_lwh[i])
            abs_sums[i] += delta
            rel_sums[i] += delta / label_lwh[i]
        iou_sum += bev_iou_centered(pred.dims, label.dimensions)
        if not pred.imputed:
            predicted += 1
    n = len(ordered)
    return MetricsReport(
        abs_err_lwh=tuple(s / n for s in abs_sums),
        rel_err_lwh=tuple(s / n for s in rel_sums),
        mean_iou=iou_sum / n,
        pct_predictions=predicted / n,
        n_samples=n,
    )


SliceKeyFn = Callable[[DimPrediction, GroundTruthLabel], "str | None"]


def slice_reports(
    preds: Sequence[DimPrediction],
    labels: Mapping[str, GroundTruthLabel],
    key_fn: SliceKeyFn,
) -> dict[str, MetricsReport]:
    """Group predictions by key and score each group; None keys are skipped."""
    groups: dict[str, list[DimPrediction]] = {}
    for pred in preds:
        key = key_fn(pred, _label_for(pred, labels))
        if key is None:
            continue
        groups.setdefault(key, []).append(pred)
    return {key: compute_metrics(groups[key], labels) for key in sorted(groups)}


def slice_by_vehicle_type(
    preds: Sequence[DimPrediction], labels: Mapping[str, GroundTruthLabel]
) -> dict[str, MetricsReport]:
    return slice_reports(preds, labels, lambda _pred, label: label.vehicle_type.value)


@dataclass(frozen=True)
class TypeAccuracy:
    matches: int
    samples: int

    def __post_init__(self) -> None:
        if not 0 <= self.matches <= self.samples:
            raise ValueError("matches must lie in [0, samples]")

    @property
    def accuracy(self) -> float:
        return self.matches / self.samples


@dataclass(frozen=True)
class VmmgrReport:
    per_type: Mapping[VehicleType, TypeAccuracy]
    total: TypeAccuracy
    excluded_missing_truth: int


def vmmgr_accuracy(
    records: Sequence[InferenceRecord],
    labels: Mapping[str, GroundTruthLabel],
    *,
    aliases: Mapping[str, Sequence[str]] | None = None,
    generation_mode: str = "overlap",
    abstentions_as_incorrect: bool = True,
) -> VmmgrReport:
    """Identification accuracy sliced by ground-truth vehicle type.

    Samples whose truth lacks make/model/generation are excluded and counted.
    Abstentions and parse failures score as incorrect by default; setting
    ``abstentions_as_incorrect=False`` drops them from the sample set
    instead.
    """
    matches: dict[VehicleType, int] = {}
    samples: dict[VehicleType, int] = {}
    excluded = 0
    for record in sorted(records, key=lambda r: r.track_id):
        label = labels.get(record.track_id)
        if label is None:
            raise MissingLabelError(record.track_id)
        if label.make is None or label.model is None or label.generation_range is None:
            excluded += 1
            continue
        if isinstance(record.outcome, Prediction):
            matched = vmmgr_match(
                record.outcome.response,
                label,
                aliases=aliases,
                generation_mode=generation_mode,
            )
        elif abstentions_as_incorrect:
            matched = False
        else:
            continue
        vtype = label.vehicle_type
        samples[vtype] = samples.get(vtype, 0) + 1
        if matched:
            matches[vtype] = matches.get(vtype, 0) + 1

    per_type = {
        vtype: TypeAccuracy(matches.get(vtype, 0), samples[vtype]) for vtype in samples
    }
    total = TypeAccuracy(sum(matches.values()), sum(samples.values()))
    return VmmgrReport(per_type=per_type, total=total, excluded_missing_truth=excluded)


@dataclass(frozen=True)
class ModificationSplit:
    unmodified: MetricsReport | None
    modified: MetricsReport | None
    pct_unmodified: float
    n_unmodified: int
    n_modified: int


def modification_split(
    preds: Sequence[DimPrediction], labels: Mapping[str, GroundTruthLabel]
) -> ModificationSplit:
    """Score modified-flagged and unflagged predictions separately.

    Imputed predictions are excluded from both sides: there is no response to
    read flags from. An empty side is reported as None, not an error.
    """
    scored = [p for p in preds if not p.imputed]
    if not scored:
        raise EmptySetError("no non-imputed predictions to split")
    for pred in scored:
        if pred.response is None:
            raise ValueError(f"prediction for {pred.track_id!r} lacks a response")
    modified = [p for p in scored if modification_flags(p.response)]
    unmodified = [p for p in scored if not modification_flags(p.response)]
    return ModificationSplit(
        unmodified=compute_metrics(unmodified, labels) if unmodified else None,
        modified=compute_metrics(modified, labels) if modified else None,
        pct_unmodified=len(unmodified) / len(scored),
        n_unmodified=len(unmodified),
        n_modified=len(modified),
    )


@dataclass(frozen=True)
class SuspectFlag:
    track_id: str
    dim_name: str
    pred_value: float
    label_value: float
    rel_deviation: float


def _vmmgr_fields_complete(response: VlmResponse) -> bool:
    return (
        response.make is not None
        and response.model is not None
        and response.generation_year_range is not None
    )


def _truth_fields_complete(label: GroundTruthLabel) -> bool:
    return (
        label.make is not None
        and label.model is not None
        and label.generation_range is not None
    )


def flag_label_suspects(
    preds: Sequence[DimPrediction],
    labels: Mapping[str, GroundTruthLabel],
    rel_threshold: float,
    *,
    aliases: Mapping[str, Sequence[str]] | None = None,
    generation_mode: str = "overlap",
) -> list[SuspectFlag]:
    """Surface label dimensions that a trusted prediction disagrees with.

    A prediction is trusted when its identification matched the truth, or
    when either side lacks the fields to verify; a verified MISmatch means
    the dimensions describe the wrong vehicle, so those are skipped. Imputed
    predictions are never flagged. One flag per (sample, dimension) above
    the threshold, sorted by descending deviation.
    """
    if rel_threshold <= 0:
        raise ValueError("rel_threshold must be positive")
    flags: list[SuspectFlag] = []
    for pred in sorted(preds, key=lambda p: p.track_id):
        if pred.imputed:
            continue
        label = _label_for(pred, labels)
        if (
            pred.response is not None
            and _truth_fields_complete(label)
            and _vmmgr_fields_complete(pred.response)
            and not vmmgr_match(
                pred.response, label, aliases=aliases, generation_mode=generation_mode
            )
        ):
            continue
        pred_lwh = pred.dims.as_tuple()
        label_lwh = label.dimensions.as_tuple()
        for name, pred_value, label_value in zip(DIM_NAMES, pred_lwh, label_lwh):
            deviation = abs(pred_value - label_value) / label_value
            if deviation > rel_threshold:
                flags.append(
                    SuspectFlag(
                        track_id=pred.track_id,
                        dim_name=name,
                        pred_value=pred_value,
                        label_value=label_value,
                        rel_deviation=deviation,
                    )
                )
    flags.sort(key=lambda f: (-f.rel_deviation, f.track_id, f.dim_name))
    return flags
