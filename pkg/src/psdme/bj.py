"""Berk-Jones confidence bands.

The BJ statistic is the largest Bernoulli KL divergence between the empirical
CDF and a candidate CDF.  Its null distribution does not depend on the
candidate (probability integral transform), so the critical value only
depends on ``n`` and ``alpha``.  It is computed exactly from the probability
that uniform order statistics stay inside per-index boundaries.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaln, rel_entr

from .bands import ConfidenceBand
from .data import EmpiricalCdf, TrueCdf

__all__ = [
    "BjCriticalValue",
    "bernoulli_kl",
    "bj_statistic",
    "bj_null_statistics",
    "noncrossing_probability",
    "kl_invert",
    "bj_null_quantile",
    "bj_band",
    "EXACT_MAX_N",
]

EXACT_MAX_N = 1000
MC_DEFAULT_REPS = 100_000


@dataclass(frozen=True)
class BjCriticalValue:
    n: int
    alpha: float
    q: float
    method: str
    mc_reps: int | None = None


def _kl(a, b):
    """Bernoulli KL with ``0 log 0 = 0``; infinite when ``b`` hits 0 or 1 and ``a`` does not."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return rel_entr(a, b) + rel_entr(1.0 - a, 1.0 - b)


def bernoulli_kl(a, b):
    """``a log(a/b) + (1-a) log((1-a)/(1-b))`` for ``a`` in [0, 1], ``b`` in (0, 1)."""
    a_arr, b_arr = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if np.any((b_arr <= 0) | (b_arr >= 1)):
        raise ValueError("b must lie strictly inside (0, 1)")
    if np.any((a_arr < 0) | (a_arr > 1)):
        raise ValueError("a must lie in [0, 1]")
    out = _kl(a_arr, b_arr)
    return float(out) if out.ndim == 0 else out


def bj_statistic(ecdf: EmpiricalCdf, f: TrueCdf) -> float:
    """``sup_x K(F_hat(x), F(x))`` over sample points and table knots.

    Raises
    ------
    ValueError
        If ``f`` puts probability 0 or 1 where the ECDF does not, which makes
        the statistic infinite.
    """
    pts = ecdf.sorted_values
    if f.breakpoints.size:
        pts = np.unique(np.concatenate((pts, f.breakpoints)))
    right = _kl(ecdf(pts), np.clip(f(pts), 0.0, 1.0))
    left = _kl(ecdf.left(pts), np.clip(f.left(pts), 0.0, 1.0))
    stat = float(max(right.max(), left.max()))
    if not math.isfinite(stat):
        raise ValueError("degenerate candidate CDF: value 0 or 1 inside the sample range")
    return stat


def bj_null_statistics(u_sorted: np.ndarray) -> np.ndarray:
    """BJ statistic of sorted uniform samples, row-wise for a 2-d input."""
    u = np.atleast_2d(u_sorted)
    n = u.shape[1]
    i = np.arange(1, n + 1)
    s = np.maximum(_kl(i / n, u), _kl((i - 1) / n, u))
    return s.max(axis=1)


# ------------------------------------------------------------ boundary crossing


def _poisson_pmf(lam: float, kmax: int) -> np.ndarray:
    k = np.arange(kmax + 1)
    if lam == 0.0:
        out = np.zeros(kmax + 1)
        out[0] = 1.0
        return out
    return np.exp(k * math.log(lam) - lam - gammaln(k + 1))


def noncrossing_probability(lower, upper) -> float:
    """``P(lower[i] <= U_(i+1) <= upper[i] for all i)`` for ``n`` uniform order statistics.

    Embeds the sample in a Poisson process of rate ``n`` and propagates the
    count distribution across the merged boundary grid, keeping the state
    vector normalized and tracking the scale in log space.
    """
    a = np.asarray(lower, dtype=float)
    b = np.asarray(upper, dtype=float)
    if a.ndim != 1 or a.shape != b.shape or a.size == 0:
        raise ValueError("lower and upper must be equal-length 1-d arrays")
    if np.any(a < 0) or np.any(b > 1) or np.any(a > b):
        raise ValueError("need 0 <= lower <= upper <= 1")
    if np.any(np.diff(a) < 0) or np.any(np.diff(b) < 0):
        raise ValueError("boundaries must be nondecreasing")
    n = a.size
    grid = np.unique(np.concatenate(([0.0, 1.0], a, b)))
    # count N(t) = #{U <= t} must satisfy lo(t) <= N(t) <= hi(t) on the grid
    lo = np.searchsorted(b, grid, side="right")
    hi = np.searchsorted(a, grid, side="left")
    if np.any(lo > hi):
        return 0.0
    state = np.zeros(1)
    state[0] = 1.0
    s_lo, s_hi = 0, 0
    log_scale = 0.0
    for j in range(1, grid.size):
        lam = n * (grid[j] - grid[j - 1])
        new_lo, new_hi = int(lo[j]), int(hi[j])
        kern = _poisson_pmf(lam, new_hi - s_lo)
        conv = np.convolve(state, kern)  # index r <-> count s_lo + r
        start = new_lo - s_lo
        state = conv[start:new_hi - s_lo + 1]
        s_lo, s_hi = new_lo, new_hi
        total = state.sum()
        if total <= 0.0:
            return 0.0
        state = state / total
        log_scale += math.log(total)
    # final grid point is 1 where lo = hi = n
    log_p = log_scale + math.log(state[n - s_lo]) - (n * math.log(n) - n - gammaln(n + 1))
    return float(min(1.0, math.exp(log_p)))


# ----------------------------------------------------------------- inversion


def _kl_lower_root(a: float, q: float) -> float:
    """Smallest ``u`` with ``K(a, u) <= q`` (``a`` in [0, 1])."""
    if a <= 0.0:
        return 0.0
    if a >= 1.0:
        return math.exp(-q)
    log_a, log_1a = math.log(a), math.log1p(-a)

    # solve in t = log u so that roots close to 0 keep full relative precision
    def g(t):
        return a * (log_a - t) + (1.0 - a) * (log_1a - math.log1p(-math.exp(t))) - q

    t_hi = log_a
    # a (log a - t) > q + 1 there, and the second term is >= -1/e
    t_lo = log_a - (q + 1.0) / a - 1.0
    while g(t_lo) < 0:
        t_lo = 2.0 * t_lo - 1.0
    t = brentq(g, t_lo, t_hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return math.exp(t)


def kl_invert(fhat: float, q: float) -> tuple[float, float]:
    """Interval ``{u : K(fhat, u) <= q}`` clamped to [0, 1]."""
    if not q > 0:
        raise ValueError("q must be positive")
    if not 0.0 <= fhat <= 1.0:
        raise ValueError("fhat must lie in [0, 1]")
    lo = _kl_lower_root(fhat, q)
    hi = 1.0 - _kl_lower_root(1.0 - fhat, q)
    return lo, hi


@functools.lru_cache(maxsize=256)
def _plateau_bounds(n: int, q: float) -> tuple[np.ndarray, np.ndarray]:
    bounds = np.array([kl_invert(i / n, q) for i in range(n + 1)])
    lower, upper = bounds[:, 0].copy(), bounds[:, 1].copy()
    # the inversion is monotone in i; enforce it against last-ulp noise
    lower = np.maximum.accumulate(lower)
    upper = np.maximum.accumulate(upper)
    lower.setflags(write=False)
    upper.setflags(write=False)
    return lower, upper


def _order_stat_bounds(n: int, q: float):
    lower, upper = _plateau_bounds(n, q)
    # U_(i) must satisfy both K(i/n, .) <= q and K((i-1)/n, .) <= q
    return lower[1:], upper[:-1]


def _exact_coverage(n: int, q: float) -> float:
    a, b = _order_stat_bounds(n, q)
    if np.any(a > b):
        return 0.0
    return noncrossing_probability(a, b)


def bj_null_quantile(n: int, alpha: float, method: str = "auto",
                     mc_reps: int = MC_DEFAULT_REPS, seed: int = 0) -> BjCriticalValue:
    """``(1 - alpha)`` quantile of the BJ statistic under uniform data.

    ``method="auto"`` uses the exact recursion up to ``n = 1000`` and Monte
    Carlo beyond.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if method == "auto":
        method = "exact-recursion" if n <= EXACT_MAX_N else "monte-carlo"
    if method in ("exact", "exact-recursion"):
        lo, hi = math.log(2.0) * 1e-3, math.log(2.0 * n / alpha) + 10.0
        q = brentq(lambda q: _exact_coverage(n, q) - (1.0 - alpha), lo, hi,
                   xtol=1e-13, rtol=4 * np.finfo(float).eps)
        return BjCriticalValue(n, alpha, float(q), "exact-recursion")
    if method == "monte-carlo":
        stats = _mc_null_statistics(n, mc_reps, seed)
        k = math.ceil((1.0 - alpha) * mc_reps) - 1
        q = float(np.partition(stats, k)[k])
        return BjCriticalValue(n, alpha, q, "monte-carlo", mc_reps)
    raise ValueError(f"unknown method {method!r}")


def _mc_null_statistics(n: int, reps: int, seed: int) -> np.ndarray:
    # fixed chunking with per-chunk substreams: result is schedule independent
    chunk = max(1, 2_000_000 // n)
    n_chunks = -(-reps // chunk)
    streams = np.random.SeedSequence(seed).spawn(n_chunks)
    out = []
    for c, ss in enumerate(streams):
        m = min(chunk, reps - c * chunk)
        u = np.sort(np.random.default_rng(ss).random((m, n)), axis=1)
        out.append(bj_null_statistics(u))
    return np.concatenate(out)


def bj_band(ecdf: EmpiricalCdf, crit: BjCriticalValue, config_id: str | None = None,
            meta: dict | None = None) -> ConfidenceBand:
    """Pointwise BJ bounds ``kl_invert(i/n, q)`` on every ECDF plateau."""
    if crit.n != ecdf.n:
        raise ValueError(f"critical value is for n={crit.n}, ECDF has n={ecdf.n}")
    info = {"alpha": crit.alpha, "q": crit.q, "quantile_method": crit.method,
            "n": ecdf.n}
    info.update(meta or {})
    return ConfidenceBand("berk-jones", ecdf, pointwise=_plateau_bounds(ecdf.n, crit.q),
                          meta=info, config_id=config_id)
