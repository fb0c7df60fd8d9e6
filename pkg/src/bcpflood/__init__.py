"""Training-free SAR flood mapping via changepoint analysis of backscatter series.

The package detects flooded pixels by running a Bayesian changepoint
sampler down every pixel's multi-date backscatter series, reading off the
posterior change probability at the event date, then smoothing and
thresholding the probability raster. A single-image Otsu baseline and a
full evaluation harness ride along.
"""

from .bcp import (
    BcpConfig,
    BcpResult,
    PartitionState,
    TimeSeriesSample,
    block_sums,
    conditional_change_odds,
    exact_stationary,
    gibbs_pass,
    run_bcp,
)
from .engine import (
    ProbabilityRaster,
    config_digest,
    load_probability,
    resolve_workers,
    run_stack,
    save_probability,
)
from .errors import (
    BcpFloodError,
    ContractError,
    DataError,
    DegenerateHistogramError,
    DegenerateVarianceError,
    GeometryError,
    InsufficientDataError,
    ManifestError,
    ParameterError,
    SceneSpecError,
)
from .geotiff import GeoReference, load_geotiff, save_geotiff
from .metrics import (
    ConfusionCounts,
    MetricsRecord,
    confusion,
    metrics,
    paired_significance,
    write_metrics_csv,
)
from .otsu import (
    OtsuConfig,
    histogram_equalization,
    lee_filter,
    otsu_flood_mask,
    otsu_threshold,
)
from .postproc import (
    THRESHOLD_GRID,
    WINDOW_GRID,
    FloodMask,
    PostprocParams,
    box_filter,
    load_flood_mask,
    parameter_sweep,
    save_flood_mask,
    threshold_mask,
    window_mean,
    write_sweep_csv,
)
from .quadrature import (
    incomplete_beta_ratio,
    incomplete_beta_ratio_table,
    variance_ratio_integral,
)
from .raster import (
    ManifestEntry,
    RasterStack,
    ReferenceMap,
    StackManifest,
    aggregate_2x2,
    aggregate_stack,
    load_manifest,
    load_reference,
    load_stack,
    reference_digest,
    save_reference,
    save_stack,
    stack_digest,
)
from .synth import SceneSpec, rasterize_polygon, synth_scene

__version__ = "0.1.0"

__all__ = [
    "BcpConfig",
    "BcpFloodError",
    "BcpResult",
    "ConfusionCounts",
    "ContractError",
    "DataError",
    "DegenerateHistogramError",
    "DegenerateVarianceError",
    "FloodMask",
    "GeoReference",
    "GeometryError",
    "InsufficientDataError",
    "ManifestEntry",
    "ManifestError",
    "MetricsRecord",
    "OtsuConfig",
    "ParameterError",
    "PartitionState",
    "PostprocParams",
    "ProbabilityRaster",
    "RasterStack",
    "ReferenceMap",
    "SceneSpec",
    "SceneSpecError",
    "StackManifest",
    "THRESHOLD_GRID",
    "TimeSeriesSample",
    "WINDOW_GRID",
    "aggregate_2x2",
    "aggregate_stack",
    "block_sums",
    "box_filter",
    "conditional_change_odds",
    "config_digest",
    "confusion",
    "exact_stationary",
    "gibbs_pass",
    "histogram_equalization",
    "incomplete_beta_ratio",
    "incomplete_beta_ratio_table",
    "lee_filter",
    "load_flood_mask",
    "load_geotiff",
    "load_manifest",
    "load_probability",
    "load_reference",
    "load_stack",
    "metrics",
    "otsu_flood_mask",
    "otsu_threshold",
    "paired_significance",
    "parameter_sweep",
    "rasterize_polygon",
    "reference_digest",
    "resolve_workers",
    "run_bcp",
    "run_stack",
    "save_flood_mask",
    "save_geotiff",
    "save_probability",
    "save_reference",
    "save_stack",
    "stack_digest",
    "synth_scene",
    "threshold_mask",
    "variance_ratio_integral",
    "window_mean",
    "write_metrics_csv",
    "write_sweep_csv",
    "__version__",
]
