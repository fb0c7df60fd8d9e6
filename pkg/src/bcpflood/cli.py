"""Batch command-line surface for the detection pipeline.

Four commands: ``synth`` writes a synthetic scene to disk, ``run`` executes
load -> optional aggregation -> sampler -> smoothing/threshold -> eval,
``sweep`` evaluates the full (t, w) grid, and ``otsu`` runs the
single-image baseline. Exit codes: 0 success, 1 usage, 2 data or geometry,
3 internal failure.
"""

from __future__ import annotations

import dataclasses
import json
import sys
import traceback
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

from .bcp import BcpConfig
from .engine import resolve_workers, run_stack, save_probability
from .errors import BcpFloodError, DataError
from .metrics import SCOPES, MetricsRecord, confusion, write_metrics_csv
from .otsu import OtsuConfig, otsu_flood_mask
from .postproc import (
    PostprocParams,
    box_filter,
    parameter_sweep,
    save_flood_mask,
    threshold_mask,
    write_sweep_csv,
)
from .raster import (
    RasterStack,
    aggregate_stack,
    load_manifest,
    load_reference,
    load_stack,
    reference_digest,
    save_reference,
    save_stack,
    stack_digest,
)
from .synth import SceneSpec, synth_scene

__all__ = ["cli", "main", "RunManifest"]

CHANNEL_MODES_CLI = ("vv", "vh", "vvvh", "per-channel-max")

# Stacks finer than this are aggregated 2x2 before detection unless
# --no-aggregate is passed; 20 m inputs run as-is.
AGGREGATE_BELOW_M = 20.0


@dataclass(frozen=True)
class RunManifest:
    """Resolved invocation: inputs, outputs, and every effective parameter."""

    command: str
    stack_manifest: str
    reference: str | None
    out_dir: str
    config: BcpConfig
    params: PostprocParams
    workers: int
    aggregated: bool

    def write(self, path: Path) -> None:
        payload = dataclasses.asdict(self)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


@contextmanager
def _stage(name: str):
    # Re-raise pipeline errors with the failing stage in front so the CLI
    # message names it.
    try:
        yield
    except BcpFloodError as exc:
        raise type(exc)(f"[{name}] {exc}") from exc


def _engine_options(fn):
    options = [
        click.option("--seed", type=int, default=0, show_default=True, help="Sampler seed."),
        click.option(
            "--gamma",
            type=float,
            default=0.2,
            show_default=True,
            help="Upper bound of the prior change-probability range.",
        ),
        click.option(
            "--lambda",
            "lam",
            type=float,
            default=0.2,
            show_default=True,
            help="Upper bound of the prior variance-ratio range.",
        ),
        click.option(
            "--iters",
            type=int,
            default=500,
            show_default=True,
            help="Retained sampler sweeps per pixel.",
        ),
        click.option(
            "--burn-in",
            type=int,
            default=50,
            show_default=True,
            help="Discarded initial sweeps per pixel.",
        ),
        click.option(
            "--channel-mode",
            type=click.Choice(CHANNEL_MODES_CLI),
            default="vv",
            show_default=True,
            help="Which polarizations feed the sampler.",
        ),
        click.option(
            "--workers",
            type=int,
            default=None,
            help="Worker threads (default: BCPFLOOD_WORKERS, then CPU count).",
        ),
        click.option(
            "--no-aggregate",
            is_flag=True,
            help="Keep sub-20 m stacks at native resolution.",
        ),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _postproc_options(fn):
    options = [
        click.option(
            "--window",
            type=int,
            default=9,
            show_default=True,
            help="Box-filter window (odd).",
        ),
        click.option(
            "--threshold",
            type=float,
            default=0.2,
            show_default=True,
            help="Flood probability threshold in (0, 1).",
        ),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _resolve_config(
    stack: RasterStack,
    seed: int,
    gamma: float,
    lam: float,
    iters: int,
    burn_in: int,
    channel_mode: str,
) -> BcpConfig:
    if channel_mode == "vvvh":
        mode, channel_index = "pooled-multichannel", 0
    elif channel_mode == "per-channel-max":
        mode, channel_index = "per-channel-max", 0
    else:
        mode, channel_index = "single", stack.channel_index(channel_mode.upper())
    return BcpConfig(
        gamma=gamma,
        lam=lam,
        iterations=iters,
        burn_in=burn_in,
        seed=seed,
        channel_mode=mode,
        channel_index=channel_index,
    )


def _load_pipeline_stack(manifest: Path, no_aggregate: bool) -> tuple[RasterStack, bool]:
    with _stage("load"):
        stack = load_stack(load_manifest(manifest))
    aggregated = False
    if stack.resolution_m < AGGREGATE_BELOW_M and not no_aggregate:
        with _stage("aggregate"):
            stack = aggregate_stack(stack)
        aggregated = True
    return stack, aggregated


def _site_name(manifest: Path) -> str:
    return manifest.resolve().parent.name or "scene"


def _evaluate(
    flood,
    reference: Path | None,
    out_dir: Path,
    *,
    site: str,
    method: str,
    threshold: float | None,
    window: int | None,
) -> list[MetricsRecord] | None:
    """Write metrics.csv for all scopes, or warn and skip without a reference."""
    if reference is None or not Path(reference).exists():
        click.echo("warning: no reference map, skipping evaluation", err=True)
        return None
    with _stage("evaluate"):
        ref = load_reference(reference)
        records = [
            MetricsRecord.from_counts(
                confusion(flood, ref, scope),
                site=site,
                method=method,
                scope=scope,
                threshold=threshold,
                window=window,
            )
            for scope in SCOPES
        ]
        write_metrics_csv(out_dir / "metrics.csv", records)
    return records


@click.group(name="bcpflood")
def cli() -> None:
    """Changepoint-based flood mapping from SAR backscatter stacks."""


@cli.command("synth")
@click.argument("spec_file", required=False, type=click.Path(path_type=Path))
@click.option(
    "--out",
    "out_dir",
    required=True,
    type=click.Path(path_type=Path, file_okay=False),
    help="Output directory for the scene files.",
)
@click.option("--seed", type=int, default=None, help="Override the scene-spec seed.")
def cmd_synth(spec_file: Path | None, out_dir: Path, seed: int | None) -> None:
    """Write a synthetic scene: stack GeoTIFFs, manifest, reference map."""
    with _stage("spec"):
        spec = SceneSpec() if spec_file is None else SceneSpec.from_json(spec_file)
        if seed is not None:
            spec = dataclasses.replace(spec, seed=seed)
    with _stage("synthesize"):
        stack, reference = synth_scene(spec)
    with _stage("write"):
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest_path = save_stack(stack, out_dir)
        save_reference(reference, out_dir / "reference.tif")
        spec_payload = dataclasses.asdict(spec)
        (out_dir / "scene.json").write_text(
            json.dumps(spec_payload, indent=2, sort_keys=True) + "\n"
        )
    click.echo(f"manifest {manifest_path}")
    click.echo(f"stack digest {stack_digest(stack)}")
    click.echo(f"reference digest {reference_digest(reference)}")


@cli.command("run")
@click.argument("manifest", type=click.Path(path_type=Path, exists=False))
@click.option(
    "--reference",
    type=click.Path(path_type=Path),
    default=None,
    help="Reference map for evaluation (omit to skip eval).",
)
@click.option(
    "--out",
    "out_dir",
    required=True,
    type=click.Path(path_type=Path, file_okay=False),
    help="Output directory.",
)
@_engine_options
@_postproc_options
def cmd_run(
    manifest: Path,
    reference: Path | None,
    out_dir: Path,
    seed: int,
    gamma: float,
    lam: float,
    iters: int,
    burn_in: int,
    channel_mode: str,
    workers: int | None,
    no_aggregate: bool,
    window: int,
    threshold: float,
) -> None:
    """Detect flood on a stack: probability raster, mask, metrics."""
    params = PostprocParams(threshold=threshold, window=window)
    stack, aggregated = _load_pipeline_stack(manifest, no_aggregate)
    config = _resolve_config(stack, seed, gamma, lam, iters, burn_in, channel_mode)
    workers = resolve_workers(workers)

    out_dir.mkdir(parents=True, exist_ok=True)
    with _stage("detect"):
        prob = run_stack(stack, config, workers)
        save_probability(prob, out_dir / "probability.tif")
    with _stage("postprocess"):
        flood = threshold_mask(box_filter(prob, params.window), params.threshold)
        save_flood_mask(out_dir / "flood_mask.tif", flood)
    RunManifest(
        command="run",
        stack_manifest=str(manifest),
        reference=None if reference is None else str(reference),
        out_dir=str(out_dir),
        config=config,
        params=params,
        workers=workers,
        aggregated=aggregated,
    ).write(out_dir / "run.json")

    click.echo(f"flood pixels {flood.flood_count}")
    records = _evaluate(
        flood,
        reference,
        out_dir,
        site=_site_name(manifest),
        method=f"bcp-{channel_mode}",
        threshold=params.threshold,
        window=params.window,
    )
    if records is not None:
        for record in records:
            click.echo(
                f"{record.scope} F1 {record.f1:.4f} "
                f"precision {record.precision:.4f} recall {record.recall:.4f}"
            )


@cli.command("sweep")
@click.argument("manifest", type=click.Path(path_type=Path))
@click.option(
    "--reference",
    type=click.Path(path_type=Path),
    required=True,
    help="Reference map; the sweep is an evaluation and cannot run without it.",
)
@click.option(
    "--out",
    "out_dir",
    required=True,
    type=click.Path(path_type=Path, file_okay=False),
    help="Output directory.",
)
@click.option("--emit-plots", is_flag=True, help="Also write an F1 heatmap PNG.")
@_engine_options
def cmd_sweep(
    manifest: Path,
    reference: Path,
    out_dir: Path,
    emit_plots: bool,
    seed: int,
    gamma: float,
    lam: float,
    iters: int,
    burn_in: int,
    channel_mode: str,
    workers: int | None,
    no_aggregate: bool,
) -> None:
    """Evaluate all 63 (threshold, window) combinations into a CSV table."""
    stack, aggregated = _load_pipeline_stack(manifest, no_aggregate)
    config = _resolve_config(stack, seed, gamma, lam, iters, burn_in, channel_mode)
    workers = resolve_workers(workers)
    with _stage("evaluate"):
        ref = load_reference(reference)
    out_dir.mkdir(parents=True, exist_ok=True)
    with _stage("detect"):
        prob = run_stack(stack, config, workers)
        save_probability(prob, out_dir / "probability.tif")
    with _stage("sweep"):
        records = parameter_sweep(
            prob, ref, site=_site_name(manifest), method=f"bcp-{channel_mode}"
        )
        write_sweep_csv(out_dir / "sweep.csv", records)
    RunManifest(
        command="sweep",
        stack_manifest=str(manifest),
        reference=str(reference),
        out_dir=str(out_dir),
        config=config,
        params=PostprocParams(),
        workers=workers,
        aggregated=aggregated,
    ).write(out_dir / "run.json")
    best = max(records, key=lambda record: record.f1)
    click.echo(f"rows {len(records)}")
    click.echo(f"best F1 {best.f1:.4f} at t {best.threshold} w {best.window}")
    if emit_plots:
        with _stage("plot"):
            _write_heatmap(records, out_dir / "sweep_f1.png")
        click.echo(f"heatmap {out_dir / 'sweep_f1.png'}")


def _write_heatmap(records: list[MetricsRecord], path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    from .postproc import THRESHOLD_GRID, WINDOW_GRID

    grid = np.full((len(THRESHOLD_GRID), len(WINDOW_GRID)), np.nan)
    t_index = {t: i for i, t in enumerate(THRESHOLD_GRID)}
    w_index = {w: j for j, w in enumerate(WINDOW_GRID)}
    for record in records:
        grid[t_index[record.threshold], w_index[record.window]] = record.f1

    fig, ax = plt.subplots(figsize=(6, 5))
    image = ax.imshow(grid, origin="lower", aspect="auto", vmin=0.0, vmax=1.0, cmap="viridis")
    ax.set_xticks(range(len(WINDOW_GRID)), [str(w) for w in WINDOW_GRID])
    ax.set_yticks(range(len(THRESHOLD_GRID)), [f"{t:.1f}" for t in THRESHOLD_GRID])
    ax.set_xlabel("window w")
    ax.set_ylabel("threshold t")
    ax.set_title("F1 over the (t, w) grid")
    fig.colorbar(image, ax=ax, label="F1")
    fig.tight_layout()
    # Strip the creation date so repeated runs stay byte-identical.
    fig.savefig(path, dpi=120, metadata={"Date": None})
    plt.close(fig)


@cli.command("otsu")
@click.argument("manifest", type=click.Path(path_type=Path))
@click.option(
    "--reference",
    type=click.Path(path_type=Path),
    default=None,
    help="Reference map for evaluation (omit to skip eval).",
)
@click.option(
    "--out",
    "out_dir",
    required=True,
    type=click.Path(path_type=Path, file_okay=False),
    help="Output directory.",
)
@click.option(
    "--channel",
    type=click.Choice(["vv", "vh"]),
    default="vv",
    show_default=True,
    help="Polarization the baseline thresholds.",
)
@click.option("--bins", type=int, default=256, show_default=True, help="Histogram bins.")
@click.option(
    "--lee-window",
    type=int,
    default=7,
    show_default=True,
    help="Speckle filter window (odd).",
)
@click.option("--no-equalize", is_flag=True, help="Skip histogram equalization.")
@click.option(
    "--no-aggregate",
    is_flag=True,
    help="Keep sub-20 m stacks at native resolution.",
)
def cmd_otsu(
    manifest: Path,
    reference: Path | None,
    out_dir: Path,
    channel: str,
    bins: int,
    lee_window: int,
    no_equalize: bool,
    no_aggregate: bool,
) -> None:
    """Run the single-image Otsu baseline on the event-date image."""
    config = OtsuConfig(
        bins=bins,
        lee_window=lee_window,
        equalize=not no_equalize,
        channel=channel.upper(),
    )
    stack, _aggregated = _load_pipeline_stack(manifest, no_aggregate)
    out_dir.mkdir(parents=True, exist_ok=True)
    with _stage("baseline"):
        flood = otsu_flood_mask(stack, config)
        save_flood_mask(out_dir / "otsu_mask.tif", flood)
    click.echo(f"otsu threshold {flood.provenance['otsu_threshold']:.6f}")
    click.echo(f"flood pixels {flood.flood_count}")
    records = _evaluate(
        flood,
        reference,
        out_dir,
        site=_site_name(manifest),
        method=f"otsu-{channel}",
        threshold=None,
        window=None,
    )
    if records is not None:
        for record in records:
            click.echo(
                f"{record.scope} F1 {record.f1:.4f} "
                f"precision {record.precision:.4f} recall {record.recall:.4f}"
            )


def main(argv: list[str] | None = None) -> int:
    """Entry point mapping exceptions onto the documented exit codes."""
    try:
        cli.main(args=argv, prog_name="bcpflood", standalone_mode=False)
        return 0
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except BcpFloodError as exc:
        click.echo(f"error: {exc}", err=True)
        return exc.exit_code
    except Exception:
        click.echo("internal error:\n" + traceback.format_exc(), err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
