"""Compiled sampler kernels shared by the per-series and per-raster entry points.

Mirrors the reference odds computation in ``bcp`` exactly (same block-sum
algebra, same log-space quadrature, same divergence rules) but runs the whole
chain in nopython mode. Randomness comes from a counter-free splitmix64
stream seeded per series, so results are reproducible and independent of
thread scheduling. Functions release the GIL and share no mutable state.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX_2 = np.uint64(0x94D049BB133111EB)
_ROW_SALT = np.uint64(0xA24BAED4963EE407)
_COL_SALT = np.uint64(0x9FB21C651E98DF25)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_INV_2_53 = 1.0 / 9007199254740992.0

# Direct-index odds cache is worthwhile up to this many indicators; beyond it
# the table (m * 2^m doubles) costs more to clear than the chain saves.
_MAX_CACHED_INDICATORS = 14

# Same exact-fit snap threshold as the reference implementation: a
# within-block sum below this fraction of the total sum of squares is zero.
_EXACT_FIT_SNAP = 1e-12


@njit(cache=True, nogil=True)
def _finalize(z):
    z = (z ^ (z >> _S30)) * _MIX_1
    z = (z ^ (z >> _S27)) * _MIX_2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True)
def _next_uniform(state):
    """Advance the splitmix64 state; returns (new state, uniform in [0, 1))."""
    state = state + _GOLDEN
    z = _finalize(state)
    return state, np.float64(z >> _S11) * _INV_2_53


@njit(cache=True, nogil=True)
def mix_seed(seed, a, b):
    """Derive a child seed from (seed, a, b); used for per-pixel and per-channel streams."""
    s = seed ^ (np.uint64(a + 1) * _ROW_SALT)
    s = _finalize(s)
    s = s ^ (np.uint64(b + 1) * _COL_SALT)
    return _finalize(s)


@njit(cache=True, nogil=True)
def _log_variance_ratio(e_int, within, between, q, w_points, log_u, log_weight, lam):
    """Log of the truncated variance-ratio integral; matches quadrature module."""
    e = np.float64(e_int)
    if within == 0.0:
        power = 0.5 * e - q
        if power <= -1.0:
            return np.inf
        return -q * np.log(between) + (power + 1.0) * np.log(lam) - np.log(power + 1.0)
    running_max = -np.inf
    running_sum = 0.0
    for k in range(w_points.shape[0]):
        term = e * log_u[k] + log_weight[k] - q * np.log(within + between * w_points[k])
        if term <= running_max:
            running_sum += np.exp(term - running_max)
        else:
            running_sum = running_sum * np.exp(running_max - term) + 1.0
            running_max = term
    return running_max + np.log(running_sum)


@njit(cache=True, nogil=True)
def _boundary_delta(prefix_sum, indicators, i, n, d):
    """Change in sum-over-blocks of (block sum)^2 / count when boundary i splits its block."""
    left = 0
    for j in range(i - 1, -1, -1):
        if indicators[j]:
            left = j + 1
            break
    right = n
    for j in range(i + 1, n - 1):
        if indicators[j]:
            right = j + 1
            break
    pos = i + 1
    n_left = pos - left
    n_right = right - pos
    n_total = right - left
    delta = 0.0
    for c in range(d):
        s_left = prefix_sum[pos, c] - prefix_sum[left, c]
        s_right = prefix_sum[right, c] - prefix_sum[pos, c]
        s_total = s_left + s_right
        delta += (
            s_left * s_left / n_left
            + s_right * s_right / n_right
            - s_total * s_total / n_total
        )
    return delta


@njit(cache=True, nogil=True)
def _site_log_odds(
    prefix_sum,
    indicators,
    i,
    n,
    d,
    blocks,
    tq,
    pure_sq,
    base_q,
    beta_table,
    w_points,
    log_u,
    log_weight,
    exponent,
    lam,
):
    """Conditional log-odds for indicator i given the rest of the state."""
    delta = _boundary_delta(prefix_sum, indicators, i, n, d)
    if indicators[i]:
        tq_split = tq
        tq_merged = tq - delta
        b0 = blocks - 1
    else:
        tq_merged = tq
        tq_split = tq + delta
        b0 = blocks
    snap = _EXACT_FIT_SNAP * (pure_sq - base_q)
    w0 = pure_sq - tq_merged
    if w0 < snap:
        w0 = 0.0
    between0 = tq_merged - base_q
    if between0 < 0.0:
        between0 = 0.0
    w1 = pure_sq - tq_split
    if w1 < snap:
        w1 = 0.0
    between1 = tq_split - base_q
    if between1 < 0.0:
        between1 = 0.0
    log_num = _log_variance_ratio(b0, w1, between1, exponent, w_points, log_u, log_weight, lam)
    log_den = _log_variance_ratio(
        b0 - 1, w0, between0, exponent, w_points, log_u, log_weight, lam
    )
    num_inf = np.isinf(log_num)
    den_inf = np.isinf(log_den)
    if num_inf and den_inf:
        return -np.inf
    if num_inf:
        return np.inf
    if den_inf:
        return -np.inf
    return beta_table[b0] + log_num - log_den


@njit(cache=True, nogil=True)
def state_log_odds(
    analysis, indicators, i, beta_table, w_points, log_u, log_weight, exponent, lam, zero_eps
):
    """Odds for one indicator of an arbitrary fresh state; parity hook for tests."""
    n, d = analysis.shape
    prefix_sum = np.zeros((n + 1, d))
    pure_sq = 0.0
    for t in range(n):
        for c in range(d):
            prefix_sum[t + 1, c] = prefix_sum[t, c] + analysis[t, c]
            pure_sq += analysis[t, c] * analysis[t, c]
    base_q = 0.0
    for c in range(d):
        base_q += prefix_sum[n, c] * prefix_sum[n, c]
    base_q /= n
    if pure_sq - base_q < zero_eps:
        return -np.inf
    blocks = 1
    tq = 0.0
    start = 0
    for j in range(n - 1):
        if indicators[j]:
            blocks += 1
            for c in range(d):
                s = prefix_sum[j + 1, c] - prefix_sum[start, c]
                tq += s * s / (j + 1 - start)
            start = j + 1
    for c in range(d):
        s = prefix_sum[n, c] - prefix_sum[start, c]
        tq += s * s / (n - start)
    return _site_log_odds(
        prefix_sum,
        indicators,
        i,
        n,
        d,
        blocks,
        tq,
        pure_sq,
        base_q,
        beta_table,
        w_points,
        log_u,
        log_weight,
        exponent,
        lam,
    )


@njit(cache=True, nogil=True)
def series_chain(
    analysis,
    raw,
    beta_table,
    w_points,
    log_u,
    log_weight,
    exponent,
    lam,
    iterations,
    burn_in,
    seed,
    zero_eps,
    want_means,
):
    """Full Gibbs chain for one series: (indicator counts, summed block means).

    Sweeps indicators in ascending order, always consuming one uniform per
    site. Conditional odds are cached per (site, other-indicator state) when
    the state space is small; the cache is exact, so it changes nothing but
    speed. ``change_probability = counts / iterations`` exactly.
    """
    n, d = analysis.shape
    m = n - 1
    d_raw = raw.shape[1]
    counts = np.zeros(m, dtype=np.int64)
    mean_sum = np.zeros((n, d_raw))

    prefix_sum = np.zeros((n + 1, d))
    pure_sq = 0.0
    for t in range(n):
        for c in range(d):
            prefix_sum[t + 1, c] = prefix_sum[t, c] + analysis[t, c]
            pure_sq += analysis[t, c] * analysis[t, c]
    base_q = 0.0
    for c in range(d):
        base_q += prefix_sum[n, c] * prefix_sum[n, c]
    base_q /= n

    if pure_sq - base_q < zero_eps:
        if want_means:
            for c in range(d_raw):
                grand = 0.0
                for t in range(n):
                    grand += raw[t, c]
                grand = grand / n * iterations
                for t in range(n):
                    mean_sum[t, c] = grand
        return counts, mean_sum

    raw_prefix = np.zeros((n + 1, d_raw))
    if want_means:
        for t in range(n):
            for c in range(d_raw):
                raw_prefix[t + 1, c] = raw_prefix[t, c] + raw[t, c]

    indicators = np.zeros(m, dtype=np.bool_)
    blocks = 1
    tq = base_q
    state = seed
    use_cache = m <= _MAX_CACHED_INDICATORS
    if use_cache:
        cache = np.full(m * (1 << m), np.nan)
    else:
        cache = np.empty(0)
    mask = np.int64(0)

    for sweep in range(burn_in + iterations):
        for i in range(m):
            log_odds = np.nan
            cache_slot = -1
            if use_cache:
                cache_slot = i * (1 << m) + (mask & ~(np.int64(1) << i))
                log_odds = cache[cache_slot]
            if np.isnan(log_odds):
                log_odds = _site_log_odds(
                    prefix_sum,
                    indicators,
                    i,
                    n,
                    d,
                    blocks,
                    tq,
                    pure_sq,
                    base_q,
                    beta_table,
                    w_points,
                    log_u,
                    log_weight,
                    exponent,
                    lam,
                )
                if use_cache:
                    cache[cache_slot] = log_odds
            if np.isinf(log_odds):
                p = 1.0 if log_odds > 0.0 else 0.0
            else:
                p = 1.0 / (1.0 + np.exp(-log_odds))
            state, u = _next_uniform(state)
            new_value = u < p
            if new_value != indicators[i]:
                delta = _boundary_delta(prefix_sum, indicators, i, n, d)
                if new_value:
                    tq += delta
                    blocks += 1
                else:
                    tq -= delta
                    blocks -= 1
                indicators[i] = new_value
                mask ^= np.int64(1) << i
        if sweep >= burn_in:
            for i in range(m):
                if indicators[i]:
                    counts[i] += 1
            if want_means:
                start = 0
                for i in range(m + 1):
                    if i == m or indicators[i]:
                        end = i + 1
                        size = end - start
                        for c in range(d_raw):
                            mu = (raw_prefix[end, c] - raw_prefix[start, c]) / size
                            for t in range(start, end):
                                mean_sum[t, c] += mu
                        start = end
    return counts, mean_sum


@njit(cache=True, nogil=True)
def _standardized(series):
    """Per-channel zero mean, unit population variance; constant channels to zero."""
    n, d = series.shape
    out = np.empty((n, d))
    for c in range(d):
        mean = 0.0
        for t in range(n):
            mean += series[t, c]
        mean /= n
        var = 0.0
        for t in range(n):
            diff = series[t, c] - mean
            var += diff * diff
        var /= n
        if var > 0.0:
            scale = 1.0 / np.sqrt(var)
            for t in range(n):
                out[t, c] = (series[t, c] - mean) * scale
        else:
            for t in range(n):
                out[t, c] = 0.0
    return out


@njit(cache=True, nogil=True)
def run_rows(
    data,
    valid,
    row_start,
    row_stop,
    mode,
    channel_index,
    beta_tables,
    w_points,
    log_u,
    log_weight,
    lam,
    iterations,
    burn_in,
    seed,
    zero_eps,
    probability,
    valid_count,
):
    """Run the sampler over a block of raster rows, writing in place.

    ``data`` is (T, C, H, W), ``valid`` is (T, H, W) with a time step valid
    only if every channel is. ``mode``: 0 = single channel ``channel_index``,
    1 = pooled standardized channels, 2 = per-channel max. Each pixel's chain
    is seeded by mix_seed(seed, row, col), so output is identical however rows
    are divided among workers. Pixels with fewer than 2 valid steps get NaN.
    """
    n_dates, n_channels, _, width = data.shape
    for r in range(row_start, row_stop):
        for col in range(width):
            n_valid = 0
            for t in range(n_dates):
                if valid[t, r, col]:
                    n_valid += 1
            valid_count[r, col] = n_valid
            if n_valid < 2:
                probability[r, col] = np.nan
                continue
            series = np.empty((n_valid, n_channels))
            k = 0
            for t in range(n_dates):
                if valid[t, r, col]:
                    for c in range(n_channels):
                        series[k, c] = np.float64(data[t, c, r, col])
                    k += 1
            beta_table = beta_tables[n_valid]
            pixel_seed = mix_seed(seed, r, col)
            last = n_valid - 2
            if mode == 0:
                column = np.ascontiguousarray(series[:, channel_index : channel_index + 1])
                counts, _ = series_chain(
                    column,
                    column,
                    beta_table,
                    w_points,
                    log_u,
                    log_weight,
                    0.5 * (n_valid - 1),
                    lam,
                    iterations,
                    burn_in,
                    pixel_seed,
                    zero_eps,
                    False,
                )
                probability[r, col] = counts[last] / iterations
            elif mode == 1:
                pooled = _standardized(series)
                counts, _ = series_chain(
                    pooled,
                    pooled,
                    beta_table,
                    w_points,
                    log_u,
                    log_weight,
                    0.5 * n_channels * (n_valid - 1),
                    lam,
                    iterations,
                    burn_in,
                    pixel_seed,
                    zero_eps,
                    False,
                )
                probability[r, col] = counts[last] / iterations
            else:
                best = 0.0
                for c in range(n_channels):
                    column = np.ascontiguousarray(series[:, c : c + 1])
                    counts, _ = series_chain(
                        column,
                        column,
                        beta_table,
                        w_points,
                        log_u,
                        log_weight,
                        0.5 * (n_valid - 1),
                        lam,
                        iterations,
                        burn_in,
                        mix_seed(pixel_seed, c, 0),
                        zero_eps,
                        False,
                    )
                    p = counts[last] / iterations
                    if p > best:
                        best = p
                probability[r, col] = best
