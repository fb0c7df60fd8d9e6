"""Confusion counting, ratio metrics, and paired significance testing.

Evaluation runs against a labeled reference map with three class scopes:
``overall`` treats both flood classes as positive, ``open`` and ``urban``
evaluate one flood class with the other ignored (or, behind a flag, counted
as negative). All ratio metrics use the 0/0 -> 0 convention.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import ContractError, GeometryError, ParameterError

if TYPE_CHECKING:
    from .postproc import FloodMask
    from .raster import ReferenceMap

__all__ = [
    "SCOPES",
    "CSV_COLUMNS",
    "ConfusionCounts",
    "MetricsRecord",
    "confusion",
    "metrics",
    "paired_significance",
    "write_metrics_csv",
]

SCOPES = ("overall", "open", "urban")

CSV_COLUMNS = (
    "site",
    "method",
    "class",
    "t",
    "w",
    "tp",
    "fp",
    "fn",
    "tn",
    "precision",
    "recall",
    "f1",
    "iou",
)

_EXACT_MAX_N = 25


@dataclass(frozen=True)
class ConfusionCounts:
    """Pixel counts over the assessed (valid, non-ignored) region."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self) -> None:
        for name in ("tp", "fp", "fn", "tn"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 0:
                raise ParameterError(f"{name} must be a non-negative integer, got {value!r}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp,
            self.fp + other.fp,
            self.fn + other.fn,
            self.tn + other.tn,
        )


@dataclass(frozen=True)
class MetricsRecord:
    """One evaluated (site, method, scope, params) cell with its scores."""

    site: str
    method: str
    scope: str
    threshold: float | None
    window: int | None
    counts: ConfusionCounts
    precision: float
    recall: float
    f1: float
    iou: float

    def __post_init__(self) -> None:
        if self.scope not in SCOPES:
            raise ParameterError(f"scope must be one of {SCOPES}, got {self.scope!r}")
        for name in ("precision", "recall", "f1", "iou"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ContractError(f"{name}={value!r} outside [0, 1]")

    @classmethod
    def from_counts(
        cls,
        counts: ConfusionCounts,
        *,
        site: str,
        method: str,
        scope: str,
        threshold: float | None = None,
        window: int | None = None,
    ) -> "MetricsRecord":
        precision, recall, f1, iou = metrics(counts)
        return cls(
            site=site,
            method=method,
            scope=scope,
            threshold=threshold,
            window=window,
            counts=counts,
            precision=precision,
            recall=recall,
            f1=f1,
            iou=iou,
        )

    def csv_row(self) -> list[str]:
        return [
            self.site,
            self.method,
            self.scope,
            "" if self.threshold is None else repr(float(self.threshold)),
            "" if self.window is None else str(int(self.window)),
            str(self.counts.tp),
            str(self.counts.fp),
            str(self.counts.fn),
            str(self.counts.tn),
            repr(self.precision),
            repr(self.recall),
            repr(self.f1),
            repr(self.iou),
        ]


def confusion(
    pred: "FloodMask",
    ref: "ReferenceMap",
    scope: str = "overall",
    *,
    other_flood_as_negative: bool = False,
) -> ConfusionCounts:
    """Count TP/FP/FN/TN for a predicted mask against the reference.

    ``overall`` counts both reference flood classes (1 and 2) as positive.
    ``open`` counts class 1 as positive and by default excludes class-2
    pixels from assessment entirely; ``urban`` is the mirror image. With
    ``other_flood_as_negative`` the non-target flood class is kept in the
    assessed set as a negative instead of being excluded. NoData pixels on
    either side are never assessed.
    """
    labels = ref.labels
    if pred.mask.shape != labels.shape:
        raise GeometryError(
            f"mask grid {pred.mask.shape} does not match reference grid {labels.shape}"
        )
    if pred.georef != ref.georef:
        raise GeometryError("mask and reference georeferences differ")

    assessed = ref.valid & ~pred.nodata
    if scope == "overall":
        positive = (labels == 1) | (labels == 2)
    elif scope == "open":
        positive = labels == 1
        if not other_flood_as_negative:
            assessed &= labels != 2
    elif scope == "urban":
        positive = labels == 2
        if not other_flood_as_negative:
            assessed &= labels != 1
    else:
        raise ParameterError(f"scope must be one of {SCOPES}, got {scope!r}")

    predicted = pred.mask & assessed
    positive = positive & assessed
    tp = int(np.count_nonzero(predicted & positive))
    fp = int(np.count_nonzero(predicted & ~positive))
    fn = int(np.count_nonzero(positive & ~predicted))
    tn = int(np.count_nonzero(assessed)) - tp - fp - fn
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def metrics(counts: ConfusionCounts) -> tuple[float, float, float, float]:
    """(precision, recall, f1, iou) with every 0/0 mapped to 0."""
    tp, fp, fn = counts.tp, counts.fp, counts.fn
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    iou = tp / (tp + fp + fn) if tp + fp + fn > 0 else 0.0
    return precision, recall, f1, iou


def _exact_signed_rank_p(doubled_ranks: np.ndarray, doubled_stat: int) -> float:
    # Distribution of the doubled positive-rank sum over all 2^n sign
    # assignments, conditional on the observed (tie-averaged) ranks.
    total_mass = float(2 ** doubled_ranks.size)
    top = int(doubled_ranks.sum())
    counts = np.zeros(top + 1)
    counts[0] = 1.0
    for rank in doubled_ranks:
        shifted = counts.copy()
        shifted[rank:] += counts[: top + 1 - rank]
        counts = shifted
    lower = min(doubled_stat, top - doubled_stat)
    p = (counts[: lower + 1].sum() + counts[top - lower :].sum()) / total_mass
    return min(1.0, float(p))


def _approx_signed_rank_p(ranks: np.ndarray, stat: float) -> float:
    n = ranks.size
    mu = n * (n + 1) / 4.0
    variance = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_sizes = np.unique(ranks, return_counts=True)
    variance -= float(np.sum(tie_sizes.astype(np.float64) ** 3 - tie_sizes)) / 48.0
    if variance <= 0.0:
        return 1.0
    z = (abs(stat - mu) - 0.5) / math.sqrt(variance)
    if z <= 0.0:
        return 1.0
    return math.erfc(z / math.sqrt(2.0))


def paired_significance(f1_a: Sequence[float], f1_b: Sequence[float]) -> float:
    """Two-sided Wilcoxon signed-rank p-value for paired per-chip scores.

    Zero differences are dropped; if every pair is tied the p-value is 1.0
    by convention. The null distribution is enumerated exactly for up to
    25 nonzero pairs and approximated normally (with continuity and tie
    corrections) beyond that.
    """
    a = np.asarray(f1_a, dtype=np.float64)
    b = np.asarray(f1_b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1:
        raise ParameterError("paired scores must be 1-D vectors")
    if a.shape != b.shape:
        raise ParameterError(f"paired vectors differ in length: {a.size} vs {b.size}")
    if a.size < 5:
        raise ParameterError(f"need at least 5 pairs, got {a.size}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ParameterError("paired scores must be finite")

    diff = a - b
    diff = diff[diff != 0.0]
    if diff.size == 0:
        return 1.0

    ranks = rankdata(np.abs(diff))
    # Tie-averaged ranks are multiples of 1/2; doubling makes them exact
    # integers for the enumeration.
    doubled = np.rint(2.0 * ranks).astype(np.int64)
    doubled_stat = int(doubled[diff > 0.0].sum())
    if diff.size <= _EXACT_MAX_N:
        return _exact_signed_rank_p(doubled, doubled_stat)
    return _approx_signed_rank_p(ranks, doubled_stat / 2.0)


def write_metrics_csv(path: str | Path, records: Iterable[MetricsRecord]) -> None:
    """One record per row with the fixed CSV_COLUMNS column order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for record in records:
            writer.writerow(record.csv_row())
