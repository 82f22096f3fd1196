"""Power e-calibrators, their generalized inverses and the Vovk-Sellke envelope.

A power calibrator ``f_tau(p) = (1 - tau) * p**(-tau)`` turns a p-value into
an e-value.  The envelope ``max_tau f_tau(p)`` is not itself a calibrator but
bounds every member of the family; its inverse involves the lower real branch
of the Lambert W function.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "ECalibrator",
    "calibrate",
    "calibrator_inverse",
    "vovk_sellke",
    "vovk_sellke_inverse",
    "lambert_w_lower",
    "optimal_tau",
    "TAU_FLOOR",
]

INV_E = math.exp(-1.0)
TAU_FLOOR = 1e-9


@dataclass(frozen=True)
class ECalibrator:
    """Member of the power family with exponent ``tau`` in (0, 1)."""

    tau: float
    family: str = "power"

    def __post_init__(self):
        if self.family != "power":
            raise ValueError(f"unsupported calibrator family {self.family!r}")
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")

    def __call__(self, p: float) -> float:
        return calibrate(self, p)

    def inverse(self, y: float) -> float:
        return calibrator_inverse(self, y)


def calibrate(c: ECalibrator, p: float) -> float:
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    return (1.0 - c.tau) * p ** (-c.tau)


def calibrator_inverse(c: ECalibrator, y: float) -> float:
    """Generalized inverse ``sup{u in [0, 1] : f(u) >= y}`` for ``y >= 1``."""
    if not y >= 1.0:
        raise ValueError(f"threshold must be >= 1, got {y}")
    return math.exp(log_calibrator_inverse(c, y))


def log_calibrator_inverse(c: ECalibrator, y: float) -> float:
    """``log`` of :func:`calibrator_inverse`; stays finite when the level underflows."""
    if not y >= 1.0:
        raise ValueError(f"threshold must be >= 1, got {y}")
    return min(0.0, (math.log1p(-c.tau) - math.log(y)) / c.tau)


def vovk_sellke(p: float) -> float:
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    if p <= INV_E:
        return -INV_E / (p * math.log(p))
    return 1.0


def lambert_w_lower(x: float, tol: float = 1e-12) -> float:
    """Lower real branch ``W_{-1}(x)`` for ``x`` in ``[-1/e, 0)``.

    Halley steps from an asymptotic starting point, kept inside a bisection
    bracket on ``[-745, -1]``; ``w * exp(w) - x`` is decreasing there.
    """
    if not (-INV_E - 1e-17 <= x < 0.0):
        raise ValueError(f"x must lie in [-1/e, 0), got {x}")
    if x <= -INV_E:
        return -1.0

    def g(w):
        return w * math.exp(w) - x

    lo, hi = -745.0, -1.0  # g(lo) > 0 >= g(hi)
    p2 = 2.0 * (1.0 + math.e * x)
    if p2 < 0.25:
        p = -math.sqrt(p2)
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
    else:
        l1 = math.log(-x)
        l2 = math.log(-l1)
        w = l1 - l2 + l2 / l1
    w = min(max(w, lo), hi)
    for _ in range(200):
        r = g(w)
        if r == 0.0:
            return w
        if r > 0:
            lo = w
        else:
            hi = w
        ew = math.exp(w)
        d1 = ew * (w + 1.0)
        d2 = ew * (w + 2.0)
        denom = d1 * d1 - 0.5 * r * d2
        step = r * d1 / denom if denom != 0.0 else math.inf
        if abs(step) <= 4e-16 * abs(w) and abs(r) <= tol:
            return w
        w_new = w - step
        if not lo <= w_new <= hi:
            w_new = 0.5 * (lo + hi)
        if w_new == w:
            return w
        w = w_new
    return w


def vovk_sellke_inverse(y: float) -> float:
    if not y >= 1.0:
        raise ValueError(f"threshold must be >= 1, got {y}")
    return math.exp(lambert_w_lower(-INV_E / y))


def optimal_tau(delta: float, num_configs: int, selected_size: int) -> float:
    """Power exponent whose inverse attains the envelope at ``K / (delta * |S|)``.

    The maximizer of ``tau -> (1 - tau) p**(-tau)`` is ``1 + 1/log p``; at
    ``p = exp(W_{-1}(-delta |S| / (e K)))`` this gives ``1 + 1/W_{-1}(.)``.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if not 1 <= selected_size <= num_configs:
        raise ValueError("need 1 <= selected_size <= num_configs")
    ratio = delta * selected_size / num_configs
    if ratio >= 1.0:
        raise ValueError("delta * selected_size must be < num_configs")
    tau = 1.0 + 1.0 / lambert_w_lower(-ratio * INV_E)
    return min(max(tau, TAU_FLOOR), 1.0 - TAU_FLOOR)
