"""Command-line entry point: infer, baseline, eval, ablate.

Run settings come from flags, from a TOML-or-JSON config file (--config),
or both; explicitly passed flags always win over file values. Backend
settings live in their own file (--backend-config) or under a "backend"
table in the run config. Credentials are never read from files, only from
the environment variable the backend config names.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click
from click.core import ParameterSource

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .gateway import BackendConfig, BackendKind, GatewayError
from .manifest import ManifestError
from .pipeline import (
    DEFAULT_RANGE_FILTER_M,
    VALID_SLICES,
    RunConfig,
    failures_json,
    plan_infer,
    run_ablate,
    run_baseline_pipeline,
    run_eval,
    run_infer,
)
from .promptkit import VARIANT_ORDER, PromptVariant
from .sampler import SamplerConfig

_VARIANT_NAMES = [v.value for v in VARIANT_ORDER]
_RUN_CONFIG_KEYS = {"manifest", "out", "variant", "n_images", "range_filter", "seed", "backend"}


def _load_structured(path: Path) -> dict:
    """Parse a TOML or JSON file by suffix (unknown suffixes try TOML first)."""
    if path.suffix.lower() == ".json":
        data = json.loads(path.read_text(encoding="utf-8"))
    elif path.suffix.lower() == ".toml":
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    else:
        try:
            with path.open("rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError:
            data = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise click.ClickException(f"{path}: expected a table/object at top level")
    return data


def _backend_from_dict(data: dict, origin: str) -> BackendConfig:
    known = {f.name for f in dataclasses.fields(BackendConfig)}
    unknown = set(data) - known
    if unknown:
        raise click.ClickException(f"{origin}: unknown backend keys: {', '.join(sorted(unknown))}")
    if "backend_kind" not in data:
        raise click.ClickException(f"{origin}: backend_kind is required")
    try:
        kind = BackendKind(data["backend_kind"])
        return BackendConfig(**{**data, "backend_kind": kind})
    except ValueError as exc:
        raise click.ClickException(f"{origin}: {exc}") from exc


def _flag_given(ctx: click.Context, name: str) -> bool:
    source = ctx.get_parameter_source(name)
    return source in (ParameterSource.COMMANDLINE, ParameterSource.ENVIRONMENT)


def _merged_run_config(
    ctx: click.Context,
    config_path: Path | None,
    manifest: Path | None,
    out: Path | None,
    variant: str,
    backend_config: Path | None,
    n_images: int,
    range_filter: float,
    seed: int,
) -> RunConfig:
    file_cfg = _load_structured(config_path) if config_path else {}
    unknown = set(file_cfg) - _RUN_CONFIG_KEYS
    if unknown:
        raise click.ClickException(f"{config_path}: unknown config keys: {', '.join(sorted(unknown))}")

    def pick(param: str, flag_value, file_key: str):
        if _flag_given(ctx, param):
            return flag_value
        if file_key in file_cfg:
            return file_cfg[file_key]
        return flag_value

    manifest_value = pick("manifest", manifest, "manifest")
    out_value = pick("out", out, "out")
    if manifest_value is None:
        raise click.UsageError("--manifest is required (flag or config file)")
    if out_value is None:
        raise click.UsageError("--out is required (flag or config file)")

    if backend_config is not None:
        backend = _backend_from_dict(_load_structured(backend_config), str(backend_config))
    elif isinstance(file_cfg.get("backend"), dict):
        backend = _backend_from_dict(file_cfg["backend"], f"{config_path}[backend]")
    else:
        raise click.UsageError("--backend-config is required (flag or [backend] in config file)")

    try:
        return RunConfig(
            manifest_path=Path(manifest_value),
            output_dir=Path(out_value),
            prompt_variant=PromptVariant(pick("variant", variant, "variant")),
            backend=backend,
            sampler=SamplerConfig(n_images=int(pick("n_images", n_images, "n_images"))),
            range_filter_m=float(pick("range_filter", range_filter, "range_filter")),
            seed=int(pick("seed", seed, "seed")),
        )
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc


@click.group()
def main() -> None:
    """Seed 3D vehicle box dimensions from image crops and evaluate them."""


_COMMON_ERRORS = (ManifestError, GatewayError, ValueError, OSError)


@main.command("infer")
@click.option("--manifest", type=click.Path(path_type=Path), default=None, help="Dataset manifest JSONL.")
@click.option("--out", type=click.Path(path_type=Path), default=None, help="Output directory for artifacts.")
@click.option("--variant", type=click.Choice(_VARIANT_NAMES), default=PromptVariant.REFINED_VMMGR.value, show_default=True)
@click.option("--backend-config", type=click.Path(exists=True, path_type=Path), default=None, help="TOML/JSON backend settings.")
@click.option("--n-images", type=click.IntRange(min=1), default=3, show_default=True, help="Context images per request.")
@click.option("--range-filter", type=float, default=DEFAULT_RANGE_FILTER_M, show_default=True, help="Keep tracks with min range <= this (meters).")
@click.option("--seed", type=int, default=0, show_default=True, help="Seed for retry jitter.")
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path), default=None, help="TOML/JSON run config; explicit flags override.")
@click.option("--dry-run", is_flag=True, help="Print planned requests and payload size; send nothing.")
@click.pass_context
def cmd_infer(ctx, manifest, out, variant, backend_config, n_images, range_filter, seed, config_path, dry_run):
    """Query the model once per track and write a JSONL artifact.

    Resumable: tracks already present in the artifact are skipped; failed
    tracks are not written, so a rerun retries them.
    """
    config = _merged_run_config(
        ctx, config_path, manifest, out, variant, backend_config, n_images, range_filter, seed
    )
    try:
        if dry_run:
            click.echo(json.dumps(plan_infer(config), indent=2, sort_keys=True))
            return
        summary = run_infer(config)
    except _COMMON_ERRORS as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(
        f"wrote {summary.n_completed} records to {summary.artifact_path}"
        f" (skipped {summary.n_skipped} already present)"
    )
    if summary.n_failed:
        click.echo(failures_json(summary), err=True)
        sys.exit(1)


@main.command("baseline")
@click.option("--manifest", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--table", type=click.Path(exists=True, path_type=Path), default=None, help="Size-class table JSON (default: packaged table).")
@click.option("--range-filter", type=float, default=DEFAULT_RANGE_FILTER_M, show_default=True)
def cmd_baseline(manifest, out, table, range_filter):
    """Emit oracle-baseline predictions from ground-truth vehicle types."""
    try:
        summary = run_baseline_pipeline(
            manifest, out, table_path=table, range_filter_m=range_filter
        )
    except _COMMON_ERRORS as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"wrote {summary.n_predictions} records to {summary.artifact_path}")
    if summary.n_skipped_unlabeled:
        click.echo(
            f"warning: skipped {summary.n_skipped_unlabeled} unlabeled tracks", err=True
        )


@main.command("eval")
@click.argument("artifacts", nargs=-1, required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--manifest", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--slice", "slices", type=click.Choice(VALID_SLICES), multiple=True, help="Slices to compute (default: all).")
@click.option("--threshold", type=float, default=0.10, show_default=True, help="Relative deviation for label-suspect flags.")
@click.option("--range-filter", type=float, default=DEFAULT_RANGE_FILTER_M, show_default=True)
@click.option("--generation-match", type=click.Choice(["overlap", "exact"]), default="overlap", show_default=True)
@click.option("--aliases", type=click.Path(exists=True, path_type=Path), default=None, help="Model-name alias table JSON.")
def cmd_eval(artifacts, manifest, out, slices, threshold, range_filter, generation_match, aliases):
    """Score artifacts against labels; multiple artifacts compare side by side."""
    try:
        summary = run_eval(
            manifest,
            list(artifacts),
            out,
            slices=slices or VALID_SLICES,
            threshold=threshold,
            range_filter_m=range_filter,
            generation_mode=generation_match,
            aliases_path=aliases,
        )
    except _COMMON_ERRORS as exc:
        raise click.ClickException(str(exc)) from exc
    for path in summary.written:
        click.echo(f"wrote {path}")
    for name, column in summary.columns.items():
        if column.n_out_of_scope:
            click.echo(
                f"warning: {name}: {column.n_out_of_scope} records outside the"
                " labeled in-range set were ignored",
                err=True,
            )


@main.command("ablate")
@click.option("--manifest", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--backend-config", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--variants", type=click.Choice(_VARIANT_NAMES), multiple=True, help="Variants to run (default: all five).")
@click.option("--n-images", type=click.IntRange(min=1), default=3, show_default=True)
@click.option("--range-filter", type=float, default=DEFAULT_RANGE_FILTER_M, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--threshold", type=float, default=0.10, show_default=True)
@click.option("--generation-match", type=click.Choice(["overlap", "exact"]), default="overlap", show_default=True)
@click.option("--aliases", type=click.Path(exists=True, path_type=Path), default=None)
def cmd_ablate(manifest, out, backend_config, variants, n_images, range_filter, seed, threshold, generation_match, aliases):
    """Run several prompt variants and emit one combined comparison report."""
    backend = _backend_from_dict(_load_structured(backend_config), str(backend_config))
    requested = (
        [PromptVariant(v) for v in variants] if variants else list(VARIANT_ORDER)
    )
    try:
        summary = run_ablate(
            manifest,
            out,
            backend,
            variants=requested,
            n_images=n_images,
            range_filter_m=range_filter,
            seed=seed,
            threshold=threshold,
            generation_mode=generation_match,
            aliases_path=aliases,
        )
    except _COMMON_ERRORS as exc:
        raise click.ClickException(str(exc)) from exc
    for name, infer_summary in summary.infer_summaries.items():
        click.echo(f"{name}: {infer_summary.n_completed} records -> {infer_summary.artifact_path}")
    if summary.eval_summary is not None:
        for path in summary.eval_summary.written:
            click.echo(f"wrote {path}")
    hard_failures = {
        name: s.n_failed for name, s in summary.infer_summaries.items() if s.n_failed
    }
    if summary.variant_errors or hard_failures:
        click.echo(
            json.dumps(
                {"variant_errors": summary.variant_errors, "track_failures": hard_failures},
                indent=2,
                sort_keys=True,
            ),
            err=True,
        )
        sys.exit(1)


if __name__ == "__main__":
    main()
