"""Bayesian changepoint analysis for a single pixel's backscatter series.

The series is modelled as piecewise constant in time with Gaussian noise.
Each of the n-1 inter-observation positions carries a binary changepoint
indicator; conjugate priors over the block means and the changepoint process
integrate out analytically, leaving closed-form conditional odds for every
indicator. A systematic-scan Gibbs sampler sweeps the indicators and the
posterior mean of each indicator is the change probability at that position.

Indicator indexing is zero-based throughout: indicator ``i`` set means a new
block starts at ``values[i + 1]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from . import _kernels
from .errors import ContractError, InsufficientDataError, ParameterError
from .quadrature import (
    _sqrt_domain_rule,
    incomplete_beta_ratio_table,
    variance_ratio_integral,
)

__all__ = [
    "BcpConfig",
    "BcpResult",
    "PartitionState",
    "TimeSeriesSample",
    "block_sums",
    "conditional_change_odds",
    "exact_stationary",
    "gibbs_pass",
    "run_bcp",
]

CHANNEL_MODES = ("single", "pooled-multichannel", "per-channel-max")

_MAX_EXACT_LENGTH = 16

# A within-block sum below this fraction of the total sum of squares is an
# exact fit up to roundoff; snapping it to zero keeps the divergence branch
# independent of float accumulation order (the compiled kernel applies the
# same rule).
_EXACT_FIT_SNAP = 1e-12


@dataclass(frozen=True)
class BcpConfig:
    """Tuning parameters for the changepoint sampler.

    ``gamma`` bounds the prior changepoint probability, ``lam`` bounds the
    prior variance ratio (within-block noise over total); both live in (0, 1].
    ``iterations`` counts retained sweeps after ``burn_in`` discarded ones.
    """

    gamma: float = 0.2
    lam: float = 0.2
    iterations: int = 500
    burn_in: int = 50
    seed: int = 0
    channel_mode: str = "single"
    channel_index: int = 0
    zero_variance_epsilon: float = 1e-12
    quadrature_nodes: int = 64

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma <= 1.0:
            raise ParameterError(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0.0 < self.lam <= 1.0:
            raise ParameterError(f"lam must be in (0, 1], got {self.lam}")
        if self.iterations < 1:
            raise ParameterError(f"iterations must be >= 1, got {self.iterations}")
        if self.burn_in < 0:
            raise ParameterError(f"burn_in must be >= 0, got {self.burn_in}")
        if not 0 <= self.seed < 2**64:
            raise ParameterError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.channel_mode not in CHANNEL_MODES:
            raise ParameterError(
                f"channel_mode must be one of {CHANNEL_MODES}, got {self.channel_mode!r}"
            )
        if self.channel_index < 0:
            raise ParameterError(f"channel_index must be >= 0, got {self.channel_index}")
        if self.zero_variance_epsilon < 0.0:
            raise ParameterError(
                f"zero_variance_epsilon must be >= 0, got {self.zero_variance_epsilon}"
            )
        if self.quadrature_nodes < 2 or self.quadrature_nodes % 2 != 0:
            raise ParameterError(
                f"quadrature_nodes must be an even integer >= 2, got {self.quadrature_nodes}"
            )


@dataclass
class TimeSeriesSample:
    """One pixel's ordered observations: n time steps by d channels.

    ``valid`` flags time steps (shared across channels); invalid steps are
    dropped and re-indexed by the sampler entry points.
    """

    values: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise ParameterError(f"values must be 1-D or 2-D, got shape {values.shape}")
        n, d = values.shape
        if n < 2:
            raise ParameterError(f"need at least 2 time steps, got {n}")
        if d not in (1, 2):
            raise ParameterError(f"channel count must be 1 or 2, got {d}")
        if self.valid is None:
            valid = np.ones(n, dtype=bool)
        else:
            valid = np.asarray(self.valid, dtype=bool)
            if valid.shape != (n,):
                raise ParameterError(
                    f"valid must have shape ({n},), got {valid.shape}"
                )
        self.values = np.ascontiguousarray(values)
        self.valid = valid

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]


def _standardize(matrix: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-population-variance per channel; constant channels to zero."""
    centered = matrix - matrix.mean(axis=0)
    scale = np.sqrt(np.mean(centered**2, axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(scale > 0.0, centered / scale, 0.0)
    return np.ascontiguousarray(out)


def analysis_matrix(sample: TimeSeriesSample, config: BcpConfig | None = None) -> np.ndarray:
    """Matrix the model actually runs on, per the channel-combination mode.

    With no config the raw values pass through unchanged. ``single`` selects
    one raw channel; ``pooled-multichannel`` standardizes every channel so the
    pooled block sums weight channels equally. ``per-channel-max`` has no
    single matrix; its chains are built per channel by the sampler entry
    points.
    """
    if config is None:
        return np.ascontiguousarray(sample.values)
    if config.channel_mode == "single":
        if config.channel_index >= sample.channels:
            raise ParameterError(
                f"channel_index {config.channel_index} out of range for "
                f"{sample.channels} channels"
            )
        return np.ascontiguousarray(sample.values[:, [config.channel_index]])
    if config.channel_mode == "pooled-multichannel":
        return _standardize(sample.values)
    raise ParameterError(
        "per-channel-max runs one chain per channel; build per-channel partitions instead"
    )


class PartitionState:
    """Changepoint indicators plus cached block statistics over one matrix.

    Caches per-block counts, sums, and sums of squares, kept consistent under
    ``toggle``. Prefix sums over the matrix make any contiguous segment's
    statistics O(channels) to read.
    """

    def __init__(self, matrix: np.ndarray, indicators: np.ndarray | None = None):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim == 1:
            matrix = matrix[:, None]
        if matrix.ndim != 2 or matrix.shape[0] < 2:
            raise ParameterError(f"matrix must be 2-D with n >= 2, got shape {matrix.shape}")
        n, d = matrix.shape
        self.matrix = np.ascontiguousarray(matrix)
        self._prefix_sum = np.zeros((n + 1, d))
        self._prefix_sq = np.zeros((n + 1, d))
        np.cumsum(self.matrix, axis=0, out=self._prefix_sum[1:])
        np.cumsum(self.matrix**2, axis=0, out=self._prefix_sq[1:])
        if indicators is None:
            indicators = np.zeros(n - 1, dtype=bool)
        else:
            indicators = np.asarray(indicators, dtype=bool)
            if indicators.shape != (n - 1,):
                raise ParameterError(
                    f"indicators must have shape ({n - 1},), got {indicators.shape}"
                )
        self.indicators = indicators.copy()
        starts = np.flatnonzero(self.indicators) + 1
        self._starts = np.concatenate(([0], starts)).astype(np.intp)
        self._refresh_blocks()

    @classmethod
    def for_sample(
        cls,
        sample: TimeSeriesSample,
        config: BcpConfig | None = None,
        indicators: np.ndarray | None = None,
    ) -> "PartitionState":
        return cls(analysis_matrix(sample, config), indicators)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def channels(self) -> int:
        return self.matrix.shape[1]

    @property
    def block_count(self) -> int:
        return len(self._starts)

    @property
    def block_starts(self) -> np.ndarray:
        return self._starts.copy()

    def _refresh_blocks(self) -> None:
        bounds = np.append(self._starts, self.n)
        self.block_counts = np.diff(bounds)
        self.block_sum = self._prefix_sum[bounds[1:]] - self._prefix_sum[bounds[:-1]]
        self.block_sq = self._prefix_sq[bounds[1:]] - self._prefix_sq[bounds[:-1]]

    def _segment(self, lo: int, hi: int) -> tuple[np.ndarray, np.ndarray]:
        return (
            self._prefix_sum[hi] - self._prefix_sum[lo],
            self._prefix_sq[hi] - self._prefix_sq[lo],
        )

    def toggle(self, i: int) -> None:
        """Flip indicator i, splitting or merging the affected block in place."""
        if not 0 <= i < self.n - 1:
            raise ParameterError(f"indicator index {i} out of range for n={self.n}")
        pos = i + 1
        if self.indicators[i]:
            k = int(np.searchsorted(self._starts, pos))
            self.indicators[i] = False
            self._starts = np.delete(self._starts, k)
            self.block_counts[k - 1] += self.block_counts[k]
            self.block_sum[k - 1] += self.block_sum[k]
            self.block_sq[k - 1] += self.block_sq[k]
            self.block_counts = np.delete(self.block_counts, k)
            self.block_sum = np.delete(self.block_sum, k, axis=0)
            self.block_sq = np.delete(self.block_sq, k, axis=0)
        else:
            k = int(np.searchsorted(self._starts, pos, side="right")) - 1
            end = self._starts[k + 1] if k + 1 < len(self._starts) else self.n
            self.indicators[i] = True
            self._starts = np.insert(self._starts, k + 1, pos)
            left_sum, left_sq = self._segment(self._starts[k], pos)
            right_sum, right_sq = self._segment(pos, end)
            self.block_counts[k] = pos - self._starts[k]
            self.block_sum[k] = left_sum
            self.block_sq[k] = left_sq
            self.block_counts = np.insert(self.block_counts, k + 1, end - pos)
            self.block_sum = np.insert(self.block_sum, k + 1, right_sum, axis=0)
            self.block_sq = np.insert(self.block_sq, k + 1, right_sq, axis=0)

    def total_sum_squares(self) -> float:
        """Pooled sum of squared deviations about the grand mean."""
        n = self.n
        total, total_sq = self._segment(0, n)
        return float(np.sum(total_sq - total**2 / n))

    def within_between(self) -> tuple[float, float]:
        """(W, B) from the block caches."""
        counts = self.block_counts[:, None]
        within = float(np.sum(self.block_sq - self.block_sum**2 / counts))
        grand = self._prefix_sum[self.n] / self.n
        between = float(np.sum(counts * (self.block_sum / counts - grand) ** 2))
        return within, between


def block_sums(sample: TimeSeriesSample, partition: PartitionState) -> tuple[float, float]:
    """Within-block (W) and between-block (B) sums of squares for a partition.

    W sums squared deviations of each observation from its block mean; B sums
    block sizes times squared deviations of block means from the grand mean;
    both are pooled over the partition's channels. W + B equals the total sum
    of squares about the grand mean for every partition.
    """
    if sample.length != partition.n:
        raise ContractError(
            f"partition length {partition.n} does not match sample length {sample.length}"
        )
    if not bool(np.all(sample.valid)):
        raise ContractError("block_sums requires a fully valid (gap-compressed) sample")
    return partition.within_between()


def _split_terms(
    partition: PartitionState, i: int
) -> tuple[int, float, float, float, float]:
    """Block statistics with indicator i cleared and set: (b0, W0, B0, W1, B1).

    Uses the identity W = total_sq - Q and B = Q - n*mean^2 per channel, with
    Q the sum over blocks of (block sum)^2 / count; only the block containing
    the boundary differs between the two states, so the difference in Q is one
    split-versus-merged correction.
    """
    n = partition.n
    pos = i + 1
    starts = partition._starts
    currently_set = bool(partition.indicators[i])
    if currently_set:
        k = int(np.searchsorted(starts, pos))
        left = starts[k - 1]
        right = starts[k + 1] if k + 1 < len(starts) else n
    else:
        k = int(np.searchsorted(starts, pos, side="right")) - 1
        left = starts[k]
        right = starts[k + 1] if k + 1 < len(starts) else n
    left_sum, _ = partition._segment(left, pos)
    right_sum, _ = partition._segment(pos, right)
    merged = left_sum + right_sum
    delta = float(
        np.sum(
            left_sum**2 / (pos - left)
            + right_sum**2 / (right - pos)
            - merged**2 / (right - left)
        )
    )

    total, total_sq = partition._segment(0, n)
    pure_sq = float(np.sum(total_sq))
    base_q = float(np.sum(total**2)) / n
    counts = partition.block_counts[:, None]
    q_current = float(np.sum(partition.block_sum**2 / counts))
    if currently_set:
        q_split, q_merged = q_current, q_current - delta
        b0 = partition.block_count - 1
    else:
        q_merged, q_split = q_current, q_current + delta
        b0 = partition.block_count
    snap = _EXACT_FIT_SNAP * (pure_sq - base_q)
    w0 = pure_sq - q_merged
    w1 = pure_sq - q_split
    w0 = 0.0 if w0 < snap else w0
    w1 = 0.0 if w1 < snap else w1
    b_between0 = max(q_merged - base_q, 0.0)
    b_between1 = max(q_split - base_q, 0.0)
    return b0, w0, b_between0, w1, b_between1


def _combine_odds(log_beta: float, log_num: float, log_den: float) -> float:
    """Resolve the odds when either truncated integral diverges.

    Both integrals diverge only when both partitions fit the series exactly;
    the numerator's integrand carries an extra sqrt(w) factor, so it diverges
    strictly slower and the regularized ratio tends to zero.
    """
    num_inf = math.isinf(log_num)
    den_inf = math.isinf(log_den)
    if num_inf and den_inf:
        return -math.inf
    if num_inf:
        return math.inf
    if den_inf:
        return -math.inf
    return log_beta + log_num - log_den


def conditional_change_odds(
    i: int,
    sample: TimeSeriesSample,
    partition: PartitionState,
    config: BcpConfig,
) -> float:
    """Log-odds that indicator i is set, given all other indicators.

    Combines the truncated-beta prior ratio with the ratio of two truncated
    variance-ratio integrals, one for each setting of the indicator. Returns
    the -inf sentinel (probability zero) when the pooled total sum of squares
    falls below ``zero_variance_epsilon``.
    """
    n = partition.n
    if sample.length != n:
        raise ContractError(
            f"partition length {n} does not match sample length {sample.length}"
        )
    if not 0 <= i < n - 1:
        raise ParameterError(f"indicator index {i} out of range for n={n}")
    if partition.total_sum_squares() < config.zero_variance_epsilon:
        return -math.inf

    b0, w0, between0, w1, between1 = _split_terms(partition, i)
    d = partition.channels
    n_eff = d * (n - 1) + 1
    log_beta = float(incomplete_beta_ratio_table(n, config.gamma)[b0])
    log_num = variance_ratio_integral(
        b0 + 1, w1, between1, n_eff, config.lam, b0, config.quadrature_nodes
    )
    log_den = variance_ratio_integral(
        b0, w0, between0, n_eff, config.lam, b0 - 1, config.quadrature_nodes
    )
    return _combine_odds(log_beta, log_num, log_den)


def _probability_from_log_odds(log_odds: float) -> float:
    if math.isinf(log_odds):
        return 1.0 if log_odds > 0 else 0.0
    return float(expit(log_odds))


def gibbs_pass(
    sample: TimeSeriesSample,
    partition: PartitionState,
    config: BcpConfig,
    rng: np.random.Generator,
) -> PartitionState:
    """One systematic sweep: draw every indicator from its conditional in order.

    Mutates ``partition`` in place (block caches stay consistent) and returns
    it. One uniform variate is consumed per indicator whether or not the state
    flips, so trajectories are reproducible from the rng state alone.
    """
    for i in range(partition.n - 1):
        log_odds = conditional_change_odds(i, sample, partition, config)
        p = _probability_from_log_odds(log_odds)
        draw = rng.random() < p
        if draw != bool(partition.indicators[i]):
            partition.toggle(i)
    return partition


@dataclass(frozen=True)
class BcpResult:
    """Posterior summaries for one series.

    ``change_probability[i]`` is the exact fraction of retained sweeps with
    indicator i set. ``posterior_mean`` averages, over retained sweeps, the
    mean of the block containing each position (raw units, one column per
    channel). ``valid_indices`` maps compressed positions back to the
    original time axis.
    """

    change_probability: np.ndarray
    posterior_mean: np.ndarray
    sweeps_used: int
    valid_indices: np.ndarray

    def __post_init__(self) -> None:
        for arr in (self.change_probability, self.posterior_mean, self.valid_indices):
            arr.flags.writeable = False


def _chain_inputs(
    analysis: np.ndarray, config: BcpConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, float]:
    n, d = analysis.shape
    beta_table = incomplete_beta_ratio_table(n, config.gamma)
    w_points, log_u, log_weight = _sqrt_domain_rule(config.lam, config.quadrature_nodes)
    exponent = 0.5 * d * (n - 1)
    return beta_table, w_points, log_u, log_weight, exponent


def _run_chain(
    analysis: np.ndarray,
    raw: np.ndarray,
    config: BcpConfig,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Run one sampler chain; returns (indicator counts, summed block means)."""
    n = analysis.shape[0]
    centered = analysis - analysis.mean(axis=0)
    if float(np.sum(centered**2)) < config.zero_variance_epsilon:
        counts = np.zeros(n - 1, dtype=np.int64)
        mean_sum = np.tile(raw.mean(axis=0), (n, 1)) * config.iterations
        return counts, mean_sum
    beta_table, w_points, log_u, log_weight, exponent = _chain_inputs(analysis, config)
    return _kernels.series_chain(
        analysis,
        raw,
        beta_table,
        w_points,
        log_u,
        log_weight,
        exponent,
        config.lam,
        config.iterations,
        config.burn_in,
        np.uint64(seed),
        config.zero_variance_epsilon,
        True,
    )


def _compress(sample: TimeSeriesSample) -> tuple[np.ndarray, np.ndarray]:
    keep = np.flatnonzero(sample.valid)
    if keep.size < 2:
        raise InsufficientDataError(
            f"need at least 2 valid observations, got {keep.size}"
        )
    return np.ascontiguousarray(sample.values[keep]), keep


def run_bcp(sample: TimeSeriesSample, config: BcpConfig | None = None) -> BcpResult:
    """Posterior change probabilities and block means for one series.

    Drops invalid time steps (re-indexing positions; the mapping back is in
    ``valid_indices``), initializes all indicators false, discards ``burn_in``
    sweeps, then retains ``iterations`` sweeps. Deterministic for fixed
    (sample, config).
    """
    if config is None:
        config = BcpConfig()
    values, keep = _compress(sample)
    n, d = values.shape
    if config.channel_mode == "per-channel-max":
        probability = np.zeros(n - 1)
        posterior_mean = np.empty((n, d))
        for c in range(d):
            column = np.ascontiguousarray(values[:, [c]])
            counts, mean_sum = _run_chain(
                column, column, config, _kernels.mix_seed(np.uint64(config.seed), c, 0)
            )
            probability = np.maximum(probability, counts / config.iterations)
            posterior_mean[:, c] = mean_sum[:, 0] / config.iterations
    else:
        analysis = analysis_matrix(TimeSeriesSample(values), config)
        counts, mean_sum = _run_chain(analysis, values, config, config.seed)
        probability = counts / config.iterations
        posterior_mean = mean_sum / config.iterations
    return BcpResult(
        change_probability=probability,
        posterior_mean=posterior_mean,
        sweeps_used=config.iterations,
        valid_indices=keep,
    )


def exact_stationary(
    sample: TimeSeriesSample, config: BcpConfig | None = None
) -> np.ndarray:
    """Exact per-position change probabilities for short series.

    Builds the deterministic-sweep Gibbs kernel as the composition of the
    n-1 single-site conditional updates over all 2^(n-1) indicator states and
    power-iterates it to a stationary distribution (L1 residual < 1e-12).
    Uses only the conditional odds, so it is an independent long-run oracle
    for the sampler.
    """
    if config is None:
        config = BcpConfig()
    values, _ = _compress(sample)
    n, d = values.shape
    if n > _MAX_EXACT_LENGTH:
        raise ParameterError(
            f"exact enumeration supports n <= {_MAX_EXACT_LENGTH}, got {n}"
        )
    if config.channel_mode == "per-channel-max":
        marginals = np.zeros(n - 1)
        for c in range(d):
            sub = replace(config, channel_mode="single", channel_index=c)
            marginals = np.maximum(marginals, exact_stationary(TimeSeriesSample(values), sub))
        return marginals

    compressed = TimeSeriesSample(values)
    analysis = analysis_matrix(compressed, config)
    centered = analysis - analysis.mean(axis=0)
    if float(np.sum(centered**2)) < config.zero_variance_epsilon:
        return np.zeros(n - 1)

    m = n - 1
    states = 1 << m
    low_states = []
    site_probability = []
    for i in range(m):
        bit = 1 << i
        lows = np.array([s for s in range(states) if not s & bit], dtype=np.intp)
        probs = np.empty(lows.size)
        for j, s in enumerate(lows):
            indicators = np.array([(s >> k) & 1 for k in range(m)], dtype=bool)
            partition = PartitionState(analysis, indicators)
            log_odds = conditional_change_odds(i, compressed, partition, config)
            probs[j] = _probability_from_log_odds(log_odds)
        low_states.append(lows)
        site_probability.append(probs)

    pi = np.full(states, 1.0 / states)
    for _ in range(100_000):
        previous = pi.copy()
        for i in range(m):
            lows = low_states[i]
            highs = lows + (1 << i)
            mass = pi[lows] + pi[highs]
            pi[highs] = mass * site_probability[i]
            pi[lows] = mass * (1.0 - site_probability[i])
        if float(np.abs(pi - previous).sum()) < 1e-12:
            break
    else:
        raise ContractError("stationary distribution failed to converge")

    marginals = np.empty(m)
    for i in range(m):
        marginals[i] = float(pi[low_states[i] + (1 << i)].sum())
    return marginals
