"""Uniform CDF confidence bands and the tests they invert.

Three uniform-width constructions share the DKW shape
``[max(0, F_hat - eps), min(1, F_hat + eps)]``:

* ``ss-dme``  -- evaluation split only, radius from the split sample size;
* ``naive``   -- full data with the same radius formula (no selection fix);
* ``ps-dme``  -- full data, radius inflated through an e-calibrator.

``berk-jones`` bands (see :mod:`psdme.bj`) reuse :class:`ConfidenceBand` with
per-plateau bounds instead of a radius.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calibrate import ECalibrator, calibrator_inverse, log_calibrator_inverse
from .data import EmpiricalCdf, TrueCdf

__all__ = [
    "METHODS",
    "ConfidenceBand",
    "BandRecord",
    "ss_band_width",
    "naive_band_width",
    "ps_band_width",
    "build_band",
    "kolmogorov_distance",
    "dkw_pvalue",
    "evalue_for_candidate",
    "confidence_set_contains",
    "miscovered",
    "load_band_records",
]

METHODS = ("ss-dme", "naive", "ps-dme", "berk-jones")
_ALIASES = {"ss": "ss-dme", "ps": "ps-dme", "bj": "berk-jones", "n-ps-dme": "naive"}


def canonical_method(method: str) -> str:
    m = _ALIASES.get(method, method)
    if m not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    return m


@dataclass(frozen=True, eq=False)
class ConfidenceBand:
    """Band ``[L(x), U(x)]`` around an empirical CDF.

    Exactly one of ``radius`` (uniform methods) or ``pointwise`` is set.
    ``pointwise`` holds ``(lower, upper)`` arrays indexed by the plateau
    ``i = 0..n``, i.e. the value ``F_hat = i / n``.
    """

    method: str
    ecdf: EmpiricalCdf
    radius: float | None = None
    pointwise: tuple | None = None
    meta: dict = field(default_factory=dict)
    config_id: str | None = None

    def __post_init__(self):
        if (self.radius is None) == (self.pointwise is None):
            raise ValueError("exactly one of radius / pointwise must be given")
        if (self.method == "berk-jones") != (self.pointwise is not None):
            raise ValueError(f"method {self.method!r} does not match band kind")
        if self.radius is not None and not self.radius >= 0:
            raise ValueError("radius must be nonnegative")

    @property
    def n(self) -> int:
        return self.ecdf.n

    def plateau_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if self.pointwise is not None:
            return self.pointwise
        levels = np.arange(self.n + 1) / self.n
        return (np.maximum(0.0, levels - self.radius),
                np.minimum(1.0, levels + self.radius))

    def _at(self, counts):
        lower, upper = self.plateau_bounds()
        return lower[counts], upper[counts]

    def __call__(self, x):
        """``(L(x), U(x))`` for scalar or array ``x``."""
        return self._at(np.searchsorted(self.ecdf.sorted_values, x, side="right"))

    def left(self, x):
        """Left limits ``(L(x-), U(x-))``."""
        return self._at(np.searchsorted(self.ecdf.sorted_values, x, side="left"))

    def lower(self, x):
        return self(x)[0]

    def upper(self, x):
        return self(x)[1]

    def steps(self):
        """Distinct knots and bounds on the ``-inf`` plateau followed by each knot."""
        knots = self.ecdf.knots()
        counts = np.searchsorted(self.ecdf.sorted_values, knots, side="right")
        lower, upper = self.plateau_bounds()
        idx = np.concatenate(([0], counts))
        return knots, lower[idx], upper[idx]

    def to_record(self) -> dict:
        knots, lower, upper = self.steps()
        return {
            "config_id": self.config_id,
            "method": self.method,
            "n": self.n,
            "epsilon": None if self.radius is None else float(self.radius),
            "knots": knots.tolist(),
            "lower": lower.tolist(),
            "upper": upper.tolist(),
            "meta": dict(self.meta),
        }


@dataclass(frozen=True, eq=False)
class BandRecord:
    """Band read back from its JSON export; supports step-wise evaluation."""

    config_id: str | None
    method: str
    n: int
    epsilon: float | None
    knots: np.ndarray
    lower_steps: np.ndarray
    upper_steps: np.ndarray
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, rec: dict) -> "BandRecord":
        knots = np.asarray(rec["knots"], dtype=float)
        lower = np.asarray(rec["lower"], dtype=float)
        upper = np.asarray(rec["upper"], dtype=float)
        if lower.shape != (knots.size + 1,) or upper.shape != lower.shape:
            raise ValueError("lower/upper must have len(knots) + 1 entries")
        return cls(rec.get("config_id"), canonical_method(rec["method"]), int(rec["n"]),
                   rec.get("epsilon"), knots, lower, upper, dict(rec.get("meta", {})))

    def steps(self):
        return self.knots, self.lower_steps, self.upper_steps

    def __call__(self, x):
        i = np.searchsorted(self.knots, x, side="right")
        return self.lower_steps[i], self.upper_steps[i]


def load_band_records(path) -> list[BandRecord]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    records = doc["bands"] if isinstance(doc, dict) else doc
    return [BandRecord.from_dict(r) for r in records]


# ------------------------------------------------------------------ widths


def _check_selection(num_configs, selected_size, delta):
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if not 1 <= selected_size <= num_configs:
        raise ValueError("need 1 <= selected_size <= num_configs")


def dkw_radius(n: float, level: float) -> float:
    """Radius with ``2 exp(-2 n eps^2) = level``."""
    return math.sqrt(math.log(2.0 / level) / (2.0 * n))


def ss_band_width(n_eval: float, num_configs: int, selected_size: int, delta: float) -> float:
    """Radius ``sqrt(log(2K / (delta |S|)) / (2 n_eval))``.

    ``n_eval`` may be fractional when sweeping split ratios.
    """
    if not n_eval > 0:
        raise ValueError("n_eval must be positive")
    _check_selection(num_configs, selected_size, delta)
    return math.sqrt(math.log(2.0 * num_configs / (delta * selected_size)) / (2.0 * n_eval))


def naive_band_width(n: int, num_configs: int, selected_size: int, delta: float) -> float:
    return ss_band_width(n, num_configs, selected_size, delta)


def ps_threshold(num_configs: int, selected_size: int, delta: float) -> float:
    """E-value rejection threshold ``K / (delta |S|)``."""
    _check_selection(num_configs, selected_size, delta)
    return num_configs / (delta * selected_size)


def ps_level(num_configs: int, selected_size: int, delta: float, c: ECalibrator) -> float:
    """p-value level ``f^{-1}(K / (delta |S|))`` matched by the e-value test."""
    return calibrator_inverse(c, ps_threshold(num_configs, selected_size, delta))


def ps_band_width(n: float, num_configs: int, selected_size: int, delta: float,
                  c: ECalibrator) -> float:
    if not n > 0:
        raise ValueError("n must be positive")
    log_level = log_calibrator_inverse(c, ps_threshold(num_configs, selected_size, delta))
    return math.sqrt((math.log(2.0) - log_level) / (2.0 * n))


def build_band(ecdf: EmpiricalCdf, method: str, num_configs: int, selected_size: int,
               delta: float, calibrator: ECalibrator | None = None,
               config_id: str | None = None) -> ConfidenceBand:
    """Uniform band of the given method.

    For ``ss-dme`` the caller must pass the ECDF of the evaluation split.
    """
    method = canonical_method(method)
    meta = {"K": num_configs, "selected_size": selected_size, "delta": delta,
            "n": ecdf.n}
    if method in ("ss-dme", "naive"):
        eps = ss_band_width(ecdf.n, num_configs, selected_size, delta)
    elif method == "ps-dme":
        if calibrator is None:
            raise ValueError("ps-dme needs an e-calibrator")
        eps = ps_band_width(ecdf.n, num_configs, selected_size, delta, calibrator)
        meta["tau"] = calibrator.tau
    else:
        raise ValueError("berk-jones bands are built with psdme.bj.bj_band")
    return ConfidenceBand(method, ecdf, radius=eps, meta=meta, config_id=config_id)


# ------------------------------------------------------------ test inversion


def _probe_points(ecdf: EmpiricalCdf, f: TrueCdf) -> np.ndarray:
    pts = ecdf.sorted_values
    if f.breakpoints.size:
        pts = np.concatenate((pts, f.breakpoints))
    return np.unique(pts)


def kolmogorov_distance(ecdf: EmpiricalCdf, f: TrueCdf) -> float:
    """``sup_x |F_hat(x) - F(x)|``.

    Both functions are monotone and linear between the sample points and
    the table knots of ``f``, so the supremum is a value or a left limit at
    one of those points.
    """
    pts = _probe_points(ecdf, f)
    right = np.abs(ecdf(pts) - f(pts))
    left = np.abs(ecdf.left(pts) - f.left(pts))
    return float(max(right.max(), left.max()))


def dkw_pvalue(n: int, t: float) -> float:
    if n < 1 or t < 0:
        raise ValueError("need n >= 1 and t >= 0")
    return min(1.0, 2.0 * math.exp(-2.0 * n * t * t))


def _evalue(n: int, t: float, c: ECalibrator) -> float:
    # log-space so that p-values underflowing to 0 give an infinite e-value
    log_p = min(0.0, math.log(2.0) - 2.0 * n * t * t)
    with np.errstate(over="ignore"):
        return float((1.0 - c.tau) * np.exp(-c.tau * log_p))


def evalue_for_candidate(ecdf: EmpiricalCdf, f: TrueCdf, c: ECalibrator) -> float:
    """Calibrated DKW e-value for the null hypothesis ``F_true == f``."""
    return _evalue(ecdf.n, kolmogorov_distance(ecdf, f), c)


def confidence_set_contains(ecdf: EmpiricalCdf, f: TrueCdf, c: ECalibrator,
                            num_configs: int, selected_size: int, delta: float,
                            route: str = "evalue") -> bool:
    """Whether ``f`` survives the e-value test at ``K / (delta |S|)``.

    ``route="radius"`` decides the same event through the band radius
    instead; both use strict inequalities.
    """
    threshold = ps_threshold(num_configs, selected_size, delta)
    if route == "evalue":
        return evalue_for_candidate(ecdf, f, c) < threshold
    if route == "radius":
        eps = ps_band_width(ecdf.n, num_configs, selected_size, delta, c)
        return kolmogorov_distance(ecdf, f) < eps
    raise ValueError(f"unknown route {route!r}")


def miscovered(band: ConfidenceBand, f: TrueCdf) -> bool:
    """Whether ``f`` leaves the band somewhere on the real line."""
    if band.radius is not None:
        return kolmogorov_distance(band.ecdf, f) > band.radius
    pts = _probe_points(band.ecdf, f)
    lo, hi = band(pts)
    fv = f(pts)
    if np.any((fv < lo) | (fv > hi)):
        return True
    lo, hi = band.left(pts)
    fv = f.left(pts)
    if np.any((fv < lo) | (fv > hi)):
        return True
    # +inf plateau: F -> 1 must fit under the last upper bound
    return bool(band.plateau_bounds()[1][-1] < 1.0)
