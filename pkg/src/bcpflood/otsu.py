"""Single-image thresholding baseline: Lee filter, equalization, Otsu.

The baseline looks only at the event-date image of one polarization,
smooths speckle with an additive-form Lee filter, optionally equalizes the
histogram, and splits it at the threshold minimizing within-class
variance. Water is dark, so flood = below threshold.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DegenerateHistogramError, ParameterError
from .postproc import FloodMask, window_mean
from .raster import RasterStack

__all__ = [
    "OtsuConfig",
    "lee_filter",
    "histogram_equalization",
    "otsu_threshold",
    "otsu_flood_mask",
]

OTSU_CHANNELS = ("VV", "VH")


@dataclass(frozen=True)
class OtsuConfig:
    """Baseline parameters; the channel picks one polarization by name."""

    bins: int = 256
    lee_window: int = 7
    equalize: bool = True
    channel: str = "VV"

    def __post_init__(self) -> None:
        _check_bins(self.bins)
        if isinstance(self.lee_window, bool) or not isinstance(self.lee_window, int):
            raise ParameterError(f"lee_window must be an integer, got {self.lee_window!r}")
        if self.lee_window < 1 or self.lee_window % 2 == 0:
            raise ParameterError(f"lee_window must be odd and positive, got {self.lee_window}")
        if self.channel not in OTSU_CHANNELS:
            raise ParameterError(f"channel must be one of {OTSU_CHANNELS}, got {self.channel!r}")


def _check_bins(bins: int) -> int:
    if isinstance(bins, bool) or not isinstance(bins, (int, np.integer)):
        raise ParameterError(f"bins must be an integer, got {bins!r}")
    if bins < 2:
        raise ParameterError(f"bins must be >= 2, got {bins}")
    return int(bins)


def lee_filter(image: np.ndarray, window: int) -> np.ndarray:
    """Adaptive speckle smoother x_hat = m + k (x - m).

    The gain k = max(0, (v - v_noise) / v) uses the local window variance v
    and the scene-wide mean of local variances as the noise floor, so flat
    regions collapse to their mean while high-variance edges pass through.
    NaN cells stay NaN; every valid cell comes out finite.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ParameterError(f"image must be 2-D, got shape {image.shape}")
    valid = np.isfinite(image)
    if not valid.any():
        return image.copy()
    mean, _ = window_mean(image, valid, window)
    square_mean, _ = window_mean(np.where(valid, image, 0.0) ** 2, valid, window)
    local_var = np.maximum(square_mean - mean * mean, 0.0)
    noise_var = float(np.mean(local_var[valid]))
    gain = np.zeros_like(image)
    positive = valid & (local_var > 0.0)
    gain[positive] = np.maximum(0.0, (local_var[positive] - noise_var) / local_var[positive])
    out = mean + gain * np.where(valid, image - mean, 0.0)
    out[~valid] = np.nan
    return out


def histogram_equalization(image: np.ndarray, bins: int = 256) -> np.ndarray:
    """Map values through the empirical CDF onto [0, 1].

    The mapping is monotone non-decreasing, so pixel rank order survives up
    to bin quantization. A constant image maps to all ones; NaN cells stay
    NaN.
    """
    bins = _check_bins(bins)
    image = np.asarray(image, dtype=np.float64)
    valid = np.isfinite(image)
    out = np.full(image.shape, np.nan)
    if not valid.any():
        return out
    values = image[valid]
    lo = float(values.min())
    hi = float(values.max())
    if lo == hi:
        out[valid] = 1.0
        return out
    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(values, bins=edges)
    cdf = np.cumsum(counts) / values.size
    idx = np.clip(np.searchsorted(edges, values, side="right") - 1, 0, bins - 1)
    out[valid] = cdf[idx]
    return out


def otsu_threshold(image: np.ndarray, bins: int = 256) -> float:
    """Histogram bin edge minimizing the within-class variance.

    Equivalent to maximizing between-class variance; ties break toward the
    smaller edge. An image with no spread cannot be split.
    """
    bins = _check_bins(bins)
    image = np.asarray(image, dtype=np.float64)
    values = image[np.isfinite(image)]
    if values.size == 0:
        raise DegenerateHistogramError("no valid pixels to threshold")
    lo = float(values.min())
    hi = float(values.max())
    if lo == hi:
        raise DegenerateHistogramError("all pixel values identical")
    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(values, bins=edges)
    counts = counts.astype(np.float64)
    centers = 0.5 * (edges[:-1] + edges[1:])

    total = counts.sum()
    cum_n = np.cumsum(counts)
    cum_s = np.cumsum(counts * centers)
    cum_q = np.cumsum(counts * centers**2)

    # Candidate split k assigns bins [0, k) to class 0; the weighted class
    # variance term n*var reduces to q - s^2/n, with empty classes
    # contributing zero.
    n0 = cum_n[:-1]
    s0 = cum_s[:-1]
    q0 = cum_q[:-1]
    n1 = total - n0
    s1 = cum_s[-1] - s0
    q1 = cum_q[-1] - q0
    term0 = np.where(n0 > 0, q0 - np.divide(s0**2, n0, where=n0 > 0, out=np.zeros_like(s0)), 0.0)
    term1 = np.where(n1 > 0, q1 - np.divide(s1**2, n1, where=n1 > 0, out=np.zeros_like(s1)), 0.0)
    within = (term0 + term1) / total
    best = int(np.argmin(within))
    return float(edges[best + 1])


def otsu_flood_mask(stack: RasterStack, config: OtsuConfig | None = None) -> FloodMask:
    """Run the baseline on the event-date image of the configured channel."""
    if config is None:
        config = OtsuConfig()
    channel = stack.channel_index(config.channel)
    image = stack.data[stack.event_index, channel].astype(np.float64)
    image[stack.nodata_mask[stack.event_index]] = np.nan
    filtered = lee_filter(image, config.lee_window)
    working = histogram_equalization(filtered, config.bins) if config.equalize else filtered
    threshold = otsu_threshold(working, config.bins)
    valid = np.isfinite(working)
    mask = np.zeros(working.shape, dtype=bool)
    mask[valid] = working[valid] < threshold
    provenance = {
        "method": f"otsu-{config.channel.lower()}",
        "otsu_threshold": threshold,
        "config": asdict(config),
    }
    return FloodMask(mask=mask, nodata=~valid, georef=stack.georef, provenance=provenance)
