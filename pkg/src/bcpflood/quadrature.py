"""Log-space evaluation of the truncated prior integrals in the changepoint odds.

Two families of integrals are needed: a ratio of truncated beta integrals over
the changepoint-probability prior, and a truncated integral over the
variance-ratio prior with integrand w**(e/2) / (W + B*w)**q. Everything is
accumulated in log space so long series and extreme block sums stay finite.
"""

from __future__ import annotations

import functools
import math

import numpy as np
from scipy.special import betainc, betaln, logsumexp, roots_legendre

from .errors import DegenerateVarianceError, ParameterError

__all__ = [
    "incomplete_beta_ratio",
    "incomplete_beta_ratio_table",
    "variance_ratio_integral",
]

# Panel boundary for the variance-ratio rule, expressed as a fraction of
# sqrt(lam) in the substituted variable u = sqrt(w); u = 0.1*sqrt(lam) is
# w = lam/100, concentrating half the nodes where the integrand varies fastest.
_SPLIT_FRACTION = 0.1


@functools.lru_cache(maxsize=128)
def _sqrt_domain_rule(lam: float, nodes: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gauss-Legendre rule for integrals of w**(e/2) * g(w) over (0, lam].

    Substituting w = u**2 removes the half-integer kink at w = 0, so the rule
    converges spectrally for every integer e >= 0. Returns (w_points, log_u,
    log_weight) with the Jacobian 2u folded into log_weight; the integral is
    then logsumexp(e * log_u + log_weight + log g(w_points)).
    """
    if nodes < 2 or nodes % 2 != 0:
        raise ParameterError(f"quadrature_nodes must be an even integer >= 2, got {nodes}")
    x, w = roots_legendre(nodes // 2)
    top = math.sqrt(lam)
    split = _SPLIT_FRACTION * top
    points, log_weights = [], []
    for lo, hi in ((0.0, split), (split, top)):
        half = 0.5 * (hi - lo)
        u = half * (x + 1.0) + lo
        points.append(u)
        log_weights.append(np.log(2.0 * u * w * half))
    u = np.concatenate(points)
    rule = (u * u, np.log(u), np.concatenate(log_weights))
    for arr in rule:
        arr.flags.writeable = False
    return rule


def variance_ratio_integral(
    num_blocks: int,
    W: float,
    B: float,
    n_eff: int,
    lam: float,
    half_exponent_numerator: int,
    quadrature_nodes: int = 64,
) -> float:
    """Log of the truncated variance-ratio integral.

    Evaluates log of the integral over w in (0, lam] of
    w**(e/2) / (W + B*w)**((n_eff - 1)/2), where e is
    ``half_exponent_numerator`` (the current block count for the numerator
    call, one less for the denominator call).

    A series that is exactly piecewise constant on its blocks has W = 0; the
    integral then diverges whenever e/2 - (n_eff - 1)/2 <= -1 and +inf is
    returned so the caller can resolve the odds by the divergence rules.
    """
    if num_blocks < 1:
        raise ParameterError(f"num_blocks must be >= 1, got {num_blocks}")
    if half_exponent_numerator < 0:
        raise ParameterError(
            f"half_exponent_numerator must be >= 0, got {half_exponent_numerator}"
        )
    if n_eff < 2:
        raise ParameterError(f"n_eff must be >= 2, got {n_eff}")
    if not 0.0 < lam <= 1.0:
        raise ParameterError(f"lambda must be in (0, 1], got {lam}")
    if W < 0.0 or B < 0.0:
        raise ParameterError(f"W and B must be non-negative, got W={W}, B={B}")
    if W + B * lam <= 0.0:
        raise DegenerateVarianceError(
            "W + B*lambda is zero; apply the zero-variance rule before integrating"
        )

    e = half_exponent_numerator
    q = 0.5 * (n_eff - 1)
    if W == 0.0:
        power = 0.5 * e - q
        if power <= -1.0:
            return math.inf
        # Integrand reduces to B**-q * w**power; integrate exactly.
        return -q * math.log(B) + (power + 1.0) * math.log(lam) - math.log(power + 1.0)

    w_points, log_u, log_weight = _sqrt_domain_rule(lam, quadrature_nodes)
    return float(logsumexp(e * log_u + log_weight - q * np.log(W + B * w_points)))


# The termwise route is attempted whenever the (1-p) exponent stays below this
# bound; the condition check below rejects it when the alternating terms cancel.
_SERIES_MAX_TERMS = 200
_SERIES_CONDITION = 1e6


def _log_series_beta(a: int, m: int, hi: float) -> float | None:
    """Exact termwise value of log integral over (0, hi] of p**(a-1)*(1-p)**m.

    Expands (1-p)**m binomially and integrates each power of p, accumulating
    in extended precision. Returns None when the alternating terms cancel too
    heavily for the sum to be trusted; the tail regime that defeats the
    regularized incomplete beta has small m, so the two routes cover each
    other.
    """
    total = np.longdouble(0.0)
    coeff = np.longdouble(1.0)
    largest = np.longdouble(0.0)
    for k in range(m + 1):
        term = coeff / np.longdouble(a + k)
        total = total + term
        largest = max(largest, abs(term))
        coeff = coeff * np.longdouble(-hi) * np.longdouble(m - k) / np.longdouble(k + 1)
    if not total > 0.0 or largest > _SERIES_CONDITION * total:
        return None
    return a * math.log(hi) + float(np.log(total))


def _log_tail_beta(a: int, m: int, hi: float) -> float:
    """Log integral over (0, hi] of p**(a-1)*(1-p)**m when the mass hugs hi.

    Substitutes p = hi*exp(-s): the integral becomes hi**a times the integral
    over s in [0, inf) of exp(-a*s) * (1 - hi*exp(-s))**m, a smooth decaying
    integrand handled by doubling Gauss-Legendre panels out to where it has
    fallen by a factor exp(-96).
    """
    one_minus = max(1.0 - hi, 1e-300)
    pull = m * hi / one_minus
    rate = max(a - pull, 1.0)
    fine = 1.0 / max(rate, pull)
    top = 96.0 / rate
    edges = [0.0, 0.5 * fine]
    while edges[-1] < top:
        edges.append(edges[-1] * 2.0)
    x, w = roots_legendre(48)
    pieces = []
    for lo, up in zip(edges[:-1], edges[1:]):
        half = 0.5 * (up - lo)
        s = half * (x + 1.0) + lo
        log_f = np.log(w * half) - a * s
        if m > 0:
            log_f = log_f + m * np.log1p(-hi * np.exp(-s))
        pieces.append(log_f)
    return a * math.log(hi) + float(logsumexp(np.concatenate(pieces)))


def _log_truncated_beta(a: int, c: int, hi: float) -> float:
    """Log of the integral over p in (0, hi] of p**(a-1) * (1-p)**(c-1).

    Tries the exact termwise expansion first, then the regularized incomplete
    beta, then log-space tail quadrature. The regularized route alone loses
    several digits when the result is a deep left-tail probability, which is
    exactly where the expansion has few terms and no cancellation.
    """
    if c - 1 <= _SERIES_MAX_TERMS:
        exact = _log_series_beta(a, c - 1, hi)
        if exact is not None:
            return exact
    regularized = betainc(a, c, hi)
    if regularized > 0.0 and math.isfinite(regularized):
        return float(betaln(a, c) + math.log(regularized))
    return _log_tail_beta(a, c - 1, hi)


def incomplete_beta_ratio(b: int, n: int, gamma: float) -> float:
    """Log-ratio of the truncated beta integrals in the changepoint odds.

    Returns log of [integral over p in (0, gamma] of p**b (1-p)**(n-b-1)]
    divided by [the same integral with exponents b-1 and n-b]. At gamma = 1
    both integrals are complete beta functions and the ratio is b / (n - b).
    Finite and accurate for every valid input, including deep-tail cases
    where the regularized incomplete beta loses precision or underflows.
    """
    if b < 1 or n <= b:
        raise ParameterError(f"need 1 <= b < n, got b={b}, n={n}")
    if not 0.0 < gamma <= 1.0:
        raise ParameterError(f"gamma must be in (0, 1], got {gamma}")
    numerator = _log_truncated_beta(b + 1, n - b, gamma)
    denominator = _log_truncated_beta(b, n - b + 1, gamma)
    return numerator - denominator


@functools.lru_cache(maxsize=256)
def incomplete_beta_ratio_table(n: int, gamma: float) -> np.ndarray:
    """Vector of incomplete_beta_ratio(b, n, gamma) indexed by b in 1..n-1.

    Entry 0 is NaN (b = 0 is outside the domain). Cached per (n, gamma) since
    the sampler looks the ratio up once per site update.
    """
    if n < 2:
        raise ParameterError(f"n must be >= 2, got {n}")
    if not 0.0 < gamma <= 1.0:
        raise ParameterError(f"gamma must be in (0, 1], got {gamma}")
    table = np.full(n, np.nan)
    for b in range(1, n):
        table[b] = incomplete_beta_ratio(b, n, gamma)
    table.flags.writeable = False
    return table
