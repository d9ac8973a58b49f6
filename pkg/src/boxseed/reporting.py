"""Rendering of metric reports: markdown and CSV tables, JSON-safe dicts.

Tables put runs side by side: the metrics table has one column per run and
one row per metric; the identification table has one row per run and one
column per vehicle type plus a total.
"""

from __future__ import annotations

import csv
import io
from typing import Callable, Mapping, Sequence

from .core import MAIN_VEHICLE_TYPES
from .evaluation import (
    MetricsReport,
    ModificationSplit,
    SuspectFlag,
    TypeAccuracy,
    VmmgrReport,
)

_TYPE_TITLES = {
    "sedan": "Sedan",
    "suv": "SUV",
    "pickup_truck": "Pickup Truck",
    "van": "Van",
    "hatchback": "Hatchback",
    "other": "Other",
}


def _fmt(value: float) -> str:
    return f"{value:.4f}"


def _fmt_pct(value: float) -> str:
    return f"{value * 100:.2f}%"


_METRIC_ROWS: tuple[tuple[str, Callable[[MetricsReport], str]], ...] = (
    ("Absolute length error (m)", lambda r: _fmt(r.abs_err_lwh[0])),
    ("Absolute width error (m)", lambda r: _fmt(r.abs_err_lwh[1])),
    ("Absolute height error (m)", lambda r: _fmt(r.abs_err_lwh[2])),
    ("Relative length error", lambda r: _fmt(r.rel_err_lwh[0])),
    ("Relative width error", lambda r: _fmt(r.rel_err_lwh[1])),
    ("Relative height error", lambda r: _fmt(r.rel_err_lwh[2])),
    ("Mean BEV IoU", lambda r: _fmt(r.mean_iou)),
    ("Percentage predictions", lambda r: _fmt_pct(r.pct_predictions)),
    ("Samples", lambda r: str(r.n_samples)),
)


def _markdown_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    lines = [
        "| " + " | ".join(header) + " |",
        "| " + " | ".join("---" for _ in header) + " |",
    ]
    lines.extend("| " + " | ".join(row) + " |" for row in rows)
    return "\n".join(lines) + "\n"


def render_metrics_markdown(columns: Mapping[str, MetricsReport]) -> str:
    names = list(columns)
    rows = [
        [label, *(extract(columns[name]) for name in names)]
        for label, extract in _METRIC_ROWS
    ]
    return _markdown_table(["Metric", *names], rows)


def render_metrics_csv(columns: Mapping[str, MetricsReport]) -> str:
    names = list(columns)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["metric", *names])
    fields: tuple[tuple[str, Callable[[MetricsReport], object]], ...] = (
        ("abs_err_length_m", lambda r: r.abs_err_lwh[0]),
        ("abs_err_width_m", lambda r: r.abs_err_lwh[1]),
        ("abs_err_height_m", lambda r: r.abs_err_lwh[2]),
        ("rel_err_length", lambda r: r.rel_err_lwh[0]),
        ("rel_err_width", lambda r: r.rel_err_lwh[1]),
        ("rel_err_height", lambda r: r.rel_err_lwh[2]),
        ("mean_iou", lambda r: r.mean_iou),
        ("pct_predictions", lambda r: r.pct_predictions),
        ("n_samples", lambda r: r.n_samples),
    )
    for label, extract in fields:
        writer.writerow([label, *(extract(columns[name]) for name in names)])
    return buffer.getvalue()


def metrics_to_dict(report: MetricsReport) -> dict:
    return {
        "abs_err_lwh": list(report.abs_err_lwh),
        "rel_err_lwh": list(report.rel_err_lwh),
        "mean_iou": report.mean_iou,
        "pct_predictions": report.pct_predictions,
        "n_samples": report.n_samples,
        "slices": {name: metrics_to_dict(sub) for name, sub in sorted(report.slices.items())},
    }


def _accuracy_cell(acc: TypeAccuracy | None) -> str:
    if acc is None:
        return "-"
    return f"{acc.accuracy * 100:.1f}% ({acc.matches}/{acc.samples})"


def render_vmmgr_markdown(reports: Mapping[str, VmmgrReport]) -> str:
    header = ["Run", *(_TYPE_TITLES[t.value] for t in MAIN_VEHICLE_TYPES), "Total"]
    rows = []
    for name, report in reports.items():
        cells = [_accuracy_cell(report.per_type.get(t)) for t in MAIN_VEHICLE_TYPES]
        rows.append([name, *cells, _accuracy_cell(report.total)])
    return _markdown_table(header, rows)


def vmmgr_to_dict(report: VmmgrReport) -> dict:
    return {
        "per_type": {
            vtype.value: {"matches": acc.matches, "samples": acc.samples, "accuracy": acc.accuracy}
            for vtype, acc in sorted(report.per_type.items(), key=lambda kv: kv[0].value)
        },
        "total": {
            "matches": report.total.matches,
            "samples": report.total.samples,
            "accuracy": report.total.accuracy,
        },
        "excluded_missing_truth": report.excluded_missing_truth,
    }


def render_split_markdown(split: ModificationSplit) -> str:
    columns: dict[str, MetricsReport] = {}
    if split.unmodified is not None:
        columns[f"unmodified (n={split.n_unmodified})"] = split.unmodified
    if split.modified is not None:
        columns[f"modified (n={split.n_modified})"] = split.modified
    table = render_metrics_markdown(columns)
    share = f"Unmodified share: {_fmt_pct(split.pct_unmodified)}\n"
    return share + table


def split_to_dict(split: ModificationSplit) -> dict:
    return {
        "unmodified": metrics_to_dict(split.unmodified) if split.unmodified else None,
        "modified": metrics_to_dict(split.modified) if split.modified else None,
        "pct_unmodified": split.pct_unmodified,
        "n_unmodified": split.n_unmodified,
        "n_modified": split.n_modified,
    }


def suspects_to_csv(flags_by_run: Mapping[str, Sequence[SuspectFlag]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["run", "track_id", "dimension", "predicted_m", "label_m", "rel_deviation"])
    for run, flags in flags_by_run.items():
        for flag in flags:
            writer.writerow(
                [run, flag.track_id, flag.dim_name, flag.pred_value, flag.label_value, flag.rel_deviation]
            )
    return buffer.getvalue()


def suspects_to_rows(flags: Sequence[SuspectFlag]) -> list[dict]:
    return [
        {
            "track_id": f.track_id,
            "dimension": f.dim_name,
            "predicted_m": f.pred_value,
            "label_m": f.label_value,
            "rel_deviation": f.rel_deviation,
        }
        for f in flags
    ]


def render_suspects_markdown(flags: Sequence[SuspectFlag]) -> str:
    if not flags:
        return "No label suspects above threshold.\n"
    rows = [
        [f.track_id, f.dim_name, _fmt(f.pred_value), _fmt(f.label_value), _fmt(f.rel_deviation)]
        for f in flags
    ]
    return _markdown_table(
        ["Track", "Dimension", "Predicted (m)", "Label (m)", "Relative deviation"], rows
    )
