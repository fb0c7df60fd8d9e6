"""Applies the changepoint sampler to every pixel of a raster stack.

Work is split into row blocks executed on a thread pool; the compiled kernel
releases the GIL, so blocks run in parallel. Every pixel's chain is seeded
from (global seed, row, col), making the output bit-identical for any worker
count or row partitioning.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .bcp import BcpConfig
from .errors import ContractError, DataError, ParameterError
from .geotiff import GeoReference, load_geotiff, save_geotiff
from .quadrature import _sqrt_domain_rule, incomplete_beta_ratio_table
from .raster import RasterStack, stack_digest

__all__ = [
    "ProbabilityRaster",
    "config_digest",
    "load_probability",
    "resolve_workers",
    "run_stack",
    "save_probability",
]

WORKERS_ENV = "BCPFLOOD_WORKERS"

_MODE_CODES = {"single": 0, "pooled-multichannel": 1, "per-channel-max": 2}


@dataclass
class ProbabilityRaster:
    """Posterior change probability at the event date, per pixel.

    ``values`` is float32 or float64 (H, W) with NaN at NoData; every finite
    value lies in [0, 1]. The sampler emits float32; smoothing keeps float64
    so downstream comparisons are not limited by storage precision.
    ``provenance`` records digests of the config and input stack.
    """

    values: np.ndarray
    georef: GeoReference
    provenance: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        values = np.asarray(self.values)
        if values.dtype != np.float64:
            values = values.astype(np.float32)
        if values.ndim != 2:
            raise ParameterError(f"values must be 2-D, got shape {values.shape}")
        finite = values[np.isfinite(values)]
        if finite.size and (finite.min() < 0.0 or finite.max() > 1.0):
            raise ContractError("probability values outside [0, 1]")
        self.values = values

    @property
    def nodata(self) -> np.ndarray:
        return ~np.isfinite(self.values)


def config_digest(config: BcpConfig) -> str:
    payload = json.dumps(asdict(config), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def resolve_workers(workers: int | None = None) -> int:
    """Explicit argument, else the environment override, else CPU count."""
    if workers is None:
        env = os.environ.get(WORKERS_ENV, "").strip()
        if env:
            try:
                workers = int(env)
            except ValueError:
                raise ParameterError(f"{WORKERS_ENV}={env!r} is not an integer") from None
    if workers is None:
        workers = os.cpu_count() or 1
    if workers < 1:
        raise ParameterError(f"worker count must be >= 1, got {workers}")
    return workers


def _beta_tables(n_dates: int, gamma: float) -> np.ndarray:
    tables = np.full((n_dates + 1, max(n_dates, 2)), np.nan)
    for n_valid in range(2, n_dates + 1):
        tables[n_valid, :n_valid] = incomplete_beta_ratio_table(n_valid, gamma)
    return tables


def run_stack(
    stack: RasterStack, config: BcpConfig | None = None, workers: int | None = None
) -> ProbabilityRaster:
    """Posterior change probability at the final inter-observation position.

    Pixels with fewer than 2 valid dates come out NoData. Output is
    bit-identical across worker counts and repeated runs.
    """
    if config is None:
        config = BcpConfig()
    t, c, h, w = stack.data.shape
    if h == 0 or w == 0:
        raise ContractError("stack has an empty grid")
    mode = _MODE_CODES[config.channel_mode]
    if mode == 0 and config.channel_index >= c:
        raise ParameterError(
            f"channel_index {config.channel_index} out of range for {c} channels"
        )
    workers = resolve_workers(workers)

    beta_tables = _beta_tables(t, config.gamma)
    w_points, log_u, log_weight = _sqrt_domain_rule(config.lam, config.quadrature_nodes)
    valid = np.ascontiguousarray(~stack.nodata_mask)
    probability = np.full((h, w), np.nan)
    valid_count = np.zeros((h, w), dtype=np.int64)

    def run_block(row_start: int, row_stop: int) -> None:
        _kernels.run_rows(
            stack.data,
            valid,
            row_start,
            row_stop,
            mode,
            config.channel_index,
            beta_tables,
            w_points,
            log_u,
            log_weight,
            config.lam,
            config.iterations,
            config.burn_in,
            np.uint64(config.seed),
            config.zero_variance_epsilon,
            probability,
            valid_count,
        )

    if workers == 1:
        run_block(0, h)
    else:
        block = max(1, -(-h // (workers * 4)))
        starts = list(range(0, h, block))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(run_block, start, min(start + block, h)) for start in starts
            ]
            for future in futures:
                future.result()

    return ProbabilityRaster(
        values=probability.astype(np.float32),
        georef=stack.georef,
        provenance={"config": config_digest(config), "stack": stack_digest(stack)},
    )


def save_probability(raster: ProbabilityRaster, path: str | Path) -> None:
    """Write the float32 GeoTIFF plus a JSON provenance sidecar."""
    path = Path(path)
    save_geotiff(path, raster.values.astype(np.float32), raster.georef, nodata=float("nan"))
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps(raster.provenance, indent=2, sort_keys=True) + "\n")


def load_probability(path: str | Path) -> ProbabilityRaster:
    path = Path(path)
    data, georef, _nodata = load_geotiff(path)
    if data.ndim != 2:
        raise DataError(f"{path}: probability raster must be single-band")
    sidecar = path.with_suffix(path.suffix + ".json")
    provenance = {}
    if sidecar.exists():
        provenance = json.loads(sidecar.read_text())
    return ProbabilityRaster(values=data, georef=georef, provenance=provenance)
