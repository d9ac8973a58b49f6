"""End-to-end drivers behind the CLI: infer, baseline, eval, ablate.

Each driver is a plain function over typed configs so tests can exercise the
full pipeline without going through argument parsing. Artifact writing is
per-track JSONL (see artifacts); inference runs are resumable by skipping
track ids already present in the output artifact. Hard per-track failures
(unreadable crops, backend errors) are reported in the summary and NOT
written to the artifact, so a rerun retries exactly the failed tracks.
"""

from __future__ import annotations

import dataclasses
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .artifacts import (
    InferenceRecord,
    append_records,
    existing_track_ids,
    read_records,
    sorted_records,
)
from .baseline import BASELINE_VARIANT, load_size_class_table, run_baseline
from .core import GroundTruthLabel, VehicleTrack, filter_by_range
from .evaluation import (
    DimPrediction,
    MetricsReport,
    ModificationSplit,
    SuspectFlag,
    VmmgrReport,
    compute_metrics,
    impute_abstentions,
    modification_split,
    slice_by_vehicle_type,
    vmmgr_accuracy,
    flag_label_suspects,
)
from .gateway import BackendConfig, Clock, InferJob, infer_batch
from .manifest import load_manifest
from .parsing import (
    Abstention,
    AbstentionReason,
    Prediction,
    load_alias_table,
    parse_response,
)
from .promptkit import VARIANT_ORDER, PromptVariant, build_prompt
from .reporting import (
    metrics_to_dict,
    render_metrics_csv,
    render_metrics_markdown,
    render_split_markdown,
    render_suspects_markdown,
    render_vmmgr_markdown,
    split_to_dict,
    suspects_to_csv,
    suspects_to_rows,
    vmmgr_to_dict,
)
from .sampler import SamplerConfig, sample_uniform, select_best_views

DEFAULT_RANGE_FILTER_M = 55.0
VALID_SLICES = ("vehicle_type", "modification")


@dataclass(frozen=True)
class RunConfig:
    manifest_path: Path
    output_dir: Path
    prompt_variant: PromptVariant
    backend: BackendConfig
    sampler: SamplerConfig
    range_filter_m: float = DEFAULT_RANGE_FILTER_M
    seed: int = 0

    def __post_init__(self) -> None:
        if self.range_filter_m <= 0:
            raise ValueError("range_filter_m must be positive")


@dataclass(frozen=True)
class TrackFailure:
    track_id: str
    error: str


@dataclass
class InferSummary:
    artifact_path: Path
    n_completed: int
    n_skipped: int
    n_failed: int
    failures: list[TrackFailure] = field(default_factory=list)


def _artifact_path(config: RunConfig) -> Path:
    return Path(config.output_dir) / f"{config.prompt_variant.value}.jsonl"


def _resolve_crop(manifest_dir: Path, crop_ref: str) -> Path:
    path = Path(crop_ref)
    return path if path.is_absolute() else manifest_dir / path


def _frames_for_track(track, calibrations, sampler: SamplerConfig):
    return sample_uniform(select_best_views(track, calibrations), sampler.n_images)


def plan_infer(config: RunConfig) -> dict:
    """Dry-run accounting: planned requests and image payload, no side effects."""
    calibrations, tracks = load_manifest(config.manifest_path)
    tracks = filter_by_range(tracks, config.range_filter_m)
    artifact = _artifact_path(config)
    existing = existing_track_ids(artifact)
    manifest_dir = Path(config.manifest_path).parent

    planned = 0
    skipped = 0
    no_input = 0
    image_bytes = 0
    missing_crops: list[str] = []
    for track in tracks:
        if track.track_id in existing:
            skipped += 1
            continue
        frames = _frames_for_track(track, calibrations, config.sampler)
        if not frames:
            no_input += 1
            continue
        planned += 1
        for frame in frames:
            crop = _resolve_crop(manifest_dir, frame.crop_ref)
            if crop.is_file():
                image_bytes += crop.stat().st_size
            else:
                missing_crops.append(str(crop))
    return {
        "artifact": str(artifact),
        "planned_requests": planned,
        "skipped_existing": skipped,
        "no_input_tracks": no_input,
        "estimated_image_bytes": image_bytes,
        "missing_crops": missing_crops,
    }


def run_infer(config: RunConfig, *, clock: Clock | None = None) -> InferSummary:
    """Best-view selection → sampling → prompt → gateway → parse → artifact."""
    calibrations, tracks = load_manifest(config.manifest_path)
    tracks = filter_by_range(tracks, config.range_filter_m)
    artifact = _artifact_path(config)
    existing = existing_track_ids(artifact)
    bundle = build_prompt(config.prompt_variant, config.sampler)
    manifest_dir = Path(config.manifest_path).parent
    backend_kind = config.backend.backend_kind.value
    model = config.backend.model_name

    jobs: list[InferJob] = []
    new_records: list[InferenceRecord] = []
    failures: list[TrackFailure] = []
    skipped = 0
    for track in tracks:
        if track.track_id in existing:
            skipped += 1
            continue
        frames = _frames_for_track(track, calibrations, config.sampler)
        if not frames:
            # Nothing projects into any camera; recorded as an abstention so
            # the track still scores (imputed) downstream.
            new_records.append(
                InferenceRecord(
                    track_id=track.track_id,
                    variant=config.prompt_variant.value,
                    backend=backend_kind,
                    model=model,
                    outcome=Abstention(AbstentionReason.NO_INPUT),
                    attempt_count=0,
                    n_images=0,
                )
            )
            continue
        try:
            images = tuple(
                _resolve_crop(manifest_dir, frame.crop_ref).read_bytes() for frame in frames
            )
        except OSError as exc:
            failures.append(TrackFailure(track.track_id, f"crop unreadable: {exc}"))
            continue
        jobs.append(InferJob(track_id=track.track_id, bundle=bundle, images=images))

    n_images_by_track = {job.track_id: len(job.images) for job in jobs}
    results = (
        infer_batch(jobs, config.backend, clock=clock, rng=random.Random(config.seed))
        if jobs
        else []
    )
    for result in results:
        if result.error is not None:
            failures.append(TrackFailure(result.track_id, str(result.error)))
            continue
        inference = result.inference
        outcome = parse_response(inference.raw_text, config.prompt_variant)
        new_records.append(
            InferenceRecord(
                track_id=result.track_id,
                variant=config.prompt_variant.value,
                backend=backend_kind,
                model=model,
                outcome=outcome,
                attempt_count=inference.attempt_count,
                from_cache=inference.from_cache,
                n_images=n_images_by_track[result.track_id],
            )
        )

    append_records(artifact, sorted_records(new_records))
    return InferSummary(
        artifact_path=artifact,
        n_completed=len(new_records),
        n_skipped=skipped,
        n_failed=len(failures),
        failures=failures,
    )


@dataclass
class BaselineSummary:
    artifact_path: Path
    n_predictions: int
    n_skipped_unlabeled: int


def run_baseline_pipeline(
    manifest_path: str | Path,
    output_dir: str | Path,
    *,
    table_path: str | Path | None = None,
    range_filter_m: float = DEFAULT_RANGE_FILTER_M,
) -> BaselineSummary:
    """Oracle baseline over the labeled tracks; rewrites its artifact whole.

    Unlike inference there is nothing to resume (no paid calls), so the
    artifact is regenerated deterministically on every run.
    """
    _, tracks = load_manifest(manifest_path)
    tracks = filter_by_range(tracks, range_filter_m)
    labeled = [t for t in tracks if t.label is not None]
    table = load_size_class_table(table_path)
    predictions = run_baseline(labeled, table)

    records = [
        InferenceRecord(
            track_id=pred.track_id,
            variant=BASELINE_VARIANT,
            backend=pred.source.backend,
            model="size_classes",
            outcome=Prediction(pred.response),
            attempt_count=0,
            n_images=0,
        )
        for pred in predictions
    ]
    artifact = Path(output_dir) / "baseline.jsonl"
    artifact.parent.mkdir(parents=True, exist_ok=True)
    artifact.write_text("", encoding="utf-8")
    append_records(artifact, sorted_records(records))
    return BaselineSummary(
        artifact_path=artifact,
        n_predictions=len(records),
        n_skipped_unlabeled=len(tracks) - len(labeled),
    )


@dataclass
class ColumnReport:
    metrics: MetricsReport
    vmmgr: VmmgrReport | None
    split: ModificationSplit | None
    suspects: list[SuspectFlag]
    n_out_of_scope: int


@dataclass
class EvalSummary:
    columns: dict[str, ColumnReport]
    written: list[Path]


def _column_name(path: Path, taken: set[str]) -> str:
    name = path.stem
    candidate = name
    serial = 2
    while candidate in taken:
        candidate = f"{name}_{serial}"
        serial += 1
    taken.add(candidate)
    return candidate


def _evaluate_artifact(
    records: Sequence[InferenceRecord],
    labels: Mapping[str, GroundTruthLabel],
    slices: Sequence[str],
    threshold: float,
    aliases,
    generation_mode: str,
) -> ColumnReport:
    in_scope = [r for r in records if r.track_id in labels]
    out_of_scope = len(records) - len(in_scope)
    if not in_scope:
        raise ValueError("artifact has no records for labeled in-range tracks")
    preds = impute_abstentions(in_scope)
    metrics = compute_metrics(preds, labels)
    if "vehicle_type" in slices:
        metrics = metrics.with_slices(slice_by_vehicle_type(preds, labels))
    split = modification_split(preds, labels) if "modification" in slices else None
    vmmgr = vmmgr_accuracy(
        in_scope, labels, aliases=aliases, generation_mode=generation_mode
    )
    if vmmgr.total.samples == 0:
        vmmgr = None
    suspects = flag_label_suspects(
        preds, labels, threshold, aliases=aliases, generation_mode=generation_mode
    )
    return ColumnReport(
        metrics=metrics,
        vmmgr=vmmgr,
        split=split,
        suspects=suspects,
        n_out_of_scope=out_of_scope,
    )


def run_eval(
    manifest_path: str | Path,
    artifact_paths: Sequence[str | Path],
    output_dir: str | Path,
    *,
    slices: Sequence[str] = VALID_SLICES,
    threshold: float = 0.10,
    range_filter_m: float = DEFAULT_RANGE_FILTER_M,
    generation_mode: str = "overlap",
    aliases_path: str | Path | None = None,
) -> EvalSummary:
    """Score one or more artifacts against the manifest's labeled tracks.

    Multiple artifacts land side by side in one report, named by file stem.
    Records for unlabeled or out-of-range tracks are skipped with a count in
    the summary (evaluation proceeds over the labeled subset).
    """
    for name in slices:
        if name not in VALID_SLICES:
            raise ValueError(f"unknown slice {name!r}; valid: {', '.join(VALID_SLICES)}")
    if not artifact_paths:
        raise ValueError("at least one artifact is required")
    _, tracks = load_manifest(manifest_path)
    tracks = filter_by_range(tracks, range_filter_m)
    labels = {t.track_id: t.label for t in tracks if t.label is not None}
    aliases = load_alias_table(aliases_path) if aliases_path else None

    taken: set[str] = set()
    columns: dict[str, ColumnReport] = {}
    for raw_path in artifact_paths:
        path = Path(raw_path)
        name = _column_name(path, taken)
        try:
            columns[name] = _evaluate_artifact(
                read_records(path), labels, slices, threshold, aliases, generation_mode
            )
        except ValueError as exc:
            raise ValueError(f"{path}: {exc}") from exc

    out_dir = Path(output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_json = {
        "columns": {
            name: {
                "metrics": metrics_to_dict(col.metrics),
                "vmmgr": vmmgr_to_dict(col.vmmgr) if col.vmmgr else None,
                "modification_split": split_to_dict(col.split) if col.split else None,
                "suspects": suspects_to_rows(col.suspects),
                "out_of_scope_records": col.n_out_of_scope,
            }
            for name, col in columns.items()
        }
    }
    written = []
    json_path = out_dir / "report.json"
    json_path.write_text(
        json.dumps(report_json, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    written.append(json_path)

    md_parts = ["# Evaluation report\n", "## Metrics\n"]
    md_parts.append(render_metrics_markdown({n: c.metrics for n, c in columns.items()}))
    for name, col in columns.items():
        if col.metrics.slices:
            md_parts.append(f"\n## Per-type metrics: {name}\n")
            md_parts.append(render_metrics_markdown(col.metrics.slices))
    vmmgr_columns = {n: c.vmmgr for n, c in columns.items() if c.vmmgr is not None}
    if vmmgr_columns:
        md_parts.append("\n## Make/model/generation identification\n")
        md_parts.append(render_vmmgr_markdown(vmmgr_columns))
    for name, col in columns.items():
        if col.split is not None:
            md_parts.append(f"\n## Modification split: {name}\n")
            md_parts.append(render_split_markdown(col.split))
    for name, col in columns.items():
        md_parts.append(f"\n## Label suspects: {name}\n")
        md_parts.append(render_suspects_markdown(col.suspects))
    md_path = out_dir / "report.md"
    md_path.write_text("".join(md_parts), encoding="utf-8")
    written.append(md_path)

    csv_path = out_dir / "report.csv"
    csv_path.write_text(
        render_metrics_csv({n: c.metrics for n, c in columns.items()}), encoding="utf-8"
    )
    written.append(csv_path)

    suspects_path = out_dir / "suspects.csv"
    suspects_path.write_text(
        suspects_to_csv({n: c.suspects for n, c in columns.items()}), encoding="utf-8"
    )
    written.append(suspects_path)

    return EvalSummary(columns=columns, written=written)


@dataclass
class AblateSummary:
    infer_summaries: dict[str, InferSummary]
    variant_errors: dict[str, str]
    eval_summary: EvalSummary | None


def run_ablate(
    manifest_path: str | Path,
    output_dir: str | Path,
    backend: BackendConfig,
    *,
    variants: Sequence[PromptVariant] = VARIANT_ORDER,
    n_images: int = 3,
    range_filter_m: float = DEFAULT_RANGE_FILTER_M,
    seed: int = 0,
    threshold: float = 0.10,
    generation_mode: str = "overlap",
    aliases_path: str | Path | None = None,
    clock: Clock | None = None,
) -> AblateSummary:
    """Run every requested variant and emit one combined comparison report.

    Variant runs are isolated: one variant failing outright leaves the others
    in the combined report. Columns follow the canonical variant order.
    """
    ordered = [v for v in VARIANT_ORDER if v in set(variants)]
    if not ordered:
        raise ValueError("no valid variants requested")
    summaries: dict[str, InferSummary] = {}
    errors: dict[str, str] = {}
    artifacts: list[Path] = []
    for variant in ordered:
        config = RunConfig(
            manifest_path=Path(manifest_path),
            output_dir=Path(output_dir),
            prompt_variant=variant,
            backend=backend,
            sampler=SamplerConfig(n_images=n_images),
            range_filter_m=range_filter_m,
            seed=seed,
        )
        try:
            summary = run_infer(config, clock=clock)
        except Exception as exc:  # noqa: BLE001 - isolation is the contract
            errors[variant.value] = str(exc)
            continue
        summaries[variant.value] = summary
        artifacts.append(summary.artifact_path)

    eval_summary = None
    if artifacts:
        eval_summary = run_eval(
            manifest_path,
            artifacts,
            output_dir,
            threshold=threshold,
            range_filter_m=range_filter_m,
            generation_mode=generation_mode,
            aliases_path=aliases_path,
        )
    return AblateSummary(
        infer_summaries=summaries, variant_errors=errors, eval_summary=eval_summary
    )


def failures_json(summary: InferSummary) -> str:
    """Machine-readable failure summary for nonzero CLI exits."""
    return json.dumps(
        {
            "artifact": str(summary.artifact_path),
            "completed": summary.n_completed,
            "skipped": summary.n_skipped,
            "failed": summary.n_failed,
            "failures": [dataclasses.asdict(f) for f in summary.failures],
        },
        indent=2,
        sort_keys=True,
    )
