"""Selection rules, end-to-end evaluation, FCR simulation and width analytics."""
from __future__ import annotations

import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .bands import (
    ConfidenceBand,
    build_band,
    canonical_method,
    miscovered,
    ps_band_width,
    ps_level,
    ss_band_width,
)
from .bj import bj_band, bj_null_quantile
from .calibrate import INV_E, ECalibrator, lambert_w_lower, log_calibrator_inverse, optimal_tau
from .data import (
    KpiDataset,
    SynthLinearGaussianConfig,
    TrueCdf,
    empirical_cdf,
    fit_linear_gaussian_model,
    linear_gaussian_truth,
    split_dataset,
    synth_gaussian_grid,
    _scenario_streams,
)

__all__ = [
    "SelectionOutcome",
    "GuaranteedKpi",
    "FcrReport",
    "WidthComparison",
    "PipelineResult",
    "GaussianGridScenario",
    "LinearGaussianScenario",
    "select_top_m",
    "parse_selection_rule",
    "best_guaranteed_kpi",
    "best_over_selection",
    "fcp",
    "evaluate_pipeline",
    "simulate_fcr",
    "width_comparison",
    "width_sweep",
]


# ----------------------------------------------------------------- selection


@dataclass(frozen=True)
class SelectionOutcome:
    selected_ids: tuple
    rule: str

    def __post_init__(self):
        if len(set(self.selected_ids)) != len(self.selected_ids):
            raise ValueError("selection contains duplicates")

    @property
    def size(self) -> int:
        return len(self.selected_ids)

    def to_dict(self) -> dict:
        return {"rule": self.rule, "size": self.size, "selected_ids": list(self.selected_ids)}


def select_top_m(data: KpiDataset, m: int) -> SelectionOutcome:
    """The ``m`` configurations with the smallest sample mean (ties by id)."""
    if not 1 <= m <= len(data):
        raise ValueError(f"m must lie in [1, {len(data)}], got {m}")
    means = data.means()
    order = sorted(range(len(data)), key=lambda k: (means[k], data.ids[k]))
    return SelectionOutcome(tuple(data.ids[k] for k in order[:m]), f"top-m:{m}")


@dataclass(frozen=True)
class TopM:
    """Picklable top-m rule."""

    m: int

    def __call__(self, data: KpiDataset) -> SelectionOutcome:
        return select_top_m(data, self.m)

    def __str__(self) -> str:
        return f"top-m:{self.m}"


def parse_selection_rule(rule) -> Callable[[KpiDataset], SelectionOutcome]:
    """``"top-m:INT"`` or a callable returning config ids / a SelectionOutcome."""
    if isinstance(rule, str):
        match = re.fullmatch(r"top-m:(\d+)", rule.strip())
        if not match:
            raise ValueError(f"unknown selection rule {rule!r}; use top-m:INT")
        return TopM(int(match.group(1)))
    if callable(rule):
        return rule
    raise TypeError("selection rule must be a string or a callable")


def _apply_rule(rule, data: KpiDataset) -> SelectionOutcome:
    out = rule(data)
    if isinstance(out, SelectionOutcome):
        sel = out
    else:
        sel = SelectionOutcome(tuple(out), getattr(rule, "__name__", "user"))
    unknown = [i for i in sel.selected_ids if i not in data]
    if unknown:
        raise ValueError(f"selection returned unknown config ids {unknown[:3]}")
    return sel


# ----------------------------------------------------------- guaranteed KPI


@dataclass(frozen=True)
class GuaranteedKpi:
    gamma: float
    per_config: tuple  # ((config_id, x_star or None), ...)

    @property
    def overall(self):
        """``(config_id, x_star)`` of the smallest defined value, or None."""
        defined = [(x, cid) for cid, x in self.per_config if x is not None]
        if not defined:
            return None
        x, cid = min(defined)
        return cid, x

    def to_dict(self) -> dict:
        best = self.overall
        return {
            "gamma": self.gamma,
            "per_config": [{"id": cid, "x_star": x} for cid, x in self.per_config],
            "overall": {"id": best[0] if best else None, "x_star": best[1] if best else None},
        }


def best_guaranteed_kpi(band, gamma: float):
    """Smallest ``x`` with ``L(x) >= 1 - gamma``; None if the band never gets there.

    ``band`` is anything with a ``steps()`` method (:class:`ConfidenceBand`,
    :class:`~psdme.bands.BandRecord`).
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    knots, lower, _ = band.steps()
    hits = np.flatnonzero(lower >= 1.0 - gamma)
    if hits.size == 0:
        return None
    j = hits[0]
    return -math.inf if j == 0 else float(knots[j - 1])


def best_over_selection(bands: Sequence, gamma: float) -> GuaranteedKpi:
    if not bands:
        raise ValueError("no bands")
    return GuaranteedKpi(gamma, tuple((b.config_id, best_guaranteed_kpi(b, gamma))
                                      for b in bands))


def fcp(miscoverage_flags) -> float:
    flags = list(miscoverage_flags)
    return sum(bool(f) for f in flags) / max(len(flags), 1)


# ------------------------------------------------------------------ pipeline


@dataclass(frozen=True, eq=False)
class PipelineResult:
    method: str
    selection: SelectionOutcome
    bands: tuple
    guaranteed: tuple
    tau: float | None = None
    alpha: float | None = None
    heuristic_optimal: bool = False
    flags: tuple | None = None

    @property
    def fcp(self) -> float | None:
        return None if self.flags is None else fcp(self.flags)

    @property
    def mean_radius(self) -> float | None:
        """Unweighted mean radius over selected configs (uniform methods)."""
        radii = [b.radius for b in self.bands if b.radius is not None]
        return float(np.mean(radii)) if radii else None

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "selection": self.selection.to_dict(),
            "tau": self.tau,
            "alpha": self.alpha,
            "heuristic_optimal": self.heuristic_optimal,
            "mean_radius": self.mean_radius,
            "bands": [b.to_record() for b in self.bands],
        }
        if self.guaranteed:
            out["guaranteed_kpi"] = [g.to_dict() for g in self.guaranteed]
        if self.flags is not None:
            out["miscovered"] = dict(zip(self.selection.selected_ids, self.flags))
            out["fcp"] = self.fcp
        return out


def _resolve_tau(tau, delta, num_configs, selected_size):
    if tau is None or tau == "auto":
        return optimal_tau(delta, num_configs, selected_size), True
    return float(tau), False


def evaluate_pipeline(data: KpiDataset, truth=None, method: str = "ps-dme",
                      selection_rule="top-m:10", delta: float = 0.1,
                      gamma_list=(), tau="auto", split_fraction: float | None = None,
                      seed: int = 0, alpha: float | None = None) -> PipelineResult:
    """Select configurations, then build a band for each selected one.

    ``ss-dme`` selects on a random selection split (``split_fraction`` of
    every config) and builds bands on the rest.  The other methods select and
    build on the full data.  ``|S|`` in the width formulas is the realized
    selection size.  With ``tau="auto"`` the exponent is the envelope
    maximizer for that realized size, which is only optimal for a fixed-size
    selection; the result is flagged ``heuristic_optimal``.

    For ``berk-jones`` the level defaults to the calibrated level
    ``f^{-1}(K / (delta |S|))`` so the band inverts the same e-value test.
    """
    method = canonical_method(method)
    rule = parse_selection_rule(selection_rule)
    if truth is not None and len(truth) != len(data):
        raise ValueError("truth must have one TrueCdf per configuration")
    num_configs = len(data)
    if method == "ss-dme":
        if split_fraction is None:
            raise ValueError("ss-dme needs split_fraction")
        split = split_dataset(data, split_fraction, seed)
        selection = _apply_rule(rule, split.selection_part)
        inference = split.evaluation_part
    else:
        selection = _apply_rule(rule, data)
        inference = data

    size = selection.size
    tau_value, heuristic, alpha_value = None, False, None
    bands: list[ConfidenceBand] = []
    if size > 0:
        if method in ("ps-dme", "berk-jones") and (method == "ps-dme" or alpha is None):
            tau_value, heuristic = _resolve_tau(tau, delta, num_configs, size)
        calibrator = ECalibrator(tau_value) if tau_value is not None else None
        if method == "berk-jones":
            alpha_value = alpha if alpha is not None else ps_level(num_configs, size, delta,
                                                                   calibrator)
            crits = {}
        for cid in selection.selected_ids:
            ecdf = empirical_cdf(inference[cid])
            if method == "berk-jones":
                if ecdf.n not in crits:
                    crits[ecdf.n] = bj_null_quantile(ecdf.n, alpha_value)
                meta = {"K": num_configs, "selected_size": size, "delta": delta}
                if tau_value is not None:
                    meta["tau"] = tau_value
                bands.append(bj_band(ecdf, crits[ecdf.n], config_id=cid, meta=meta))
            else:
                bands.append(build_band(ecdf, method, num_configs, size, delta,
                                        calibrator, config_id=cid))

    guaranteed = tuple(best_over_selection(bands, g) for g in gamma_list) if bands else ()
    flags = None
    if truth is not None:
        by_id = dict(zip(data.ids, truth))
        flags = tuple(miscovered(b, by_id[b.config_id]) for b in bands)
    return PipelineResult(method, selection, tuple(bands), guaranteed, tau_value,
                          alpha_value, heuristic, flags)


# ---------------------------------------------------------------- scenarios


@dataclass(frozen=True)
class GaussianGridScenario:
    """Independent Gaussian configurations with evenly spread means."""

    num_configs: int = 50
    n: int = 40
    mean_range: tuple = (0.0, 2.0)
    stddev: float = 1.0

    @property
    def means(self) -> np.ndarray:
        return np.linspace(*self.mean_range, self.num_configs)

    def draw(self, rng):
        return synth_gaussian_grid(self.num_configs, self.means,
                                   np.full(self.num_configs, self.stddev), self.n, rng=rng)

    def to_dict(self) -> dict:
        return {"name": "gaussian-grid", "K": self.num_configs, "n": self.n,
                "mean_range": list(self.mean_range), "stddev": self.stddev}


class LinearGaussianScenario:
    """Ridge models fitted once; each trial draws a fresh calibration set.

    The reference CDFs are holdout table proxies computed once from the
    scenario seed.
    """

    def __init__(self, cfg: SynthLinearGaussianConfig):
        self.cfg = cfg
        self._model = None
        self._truth = None

    def _ensure(self):
        if self._model is None:
            self._model = fit_linear_gaussian_model(self.cfg)
            hold_ss = _scenario_streams(self.cfg.seed)[2]
            self._truth = linear_gaussian_truth(self._model, self.cfg.holdout_size,
                                                np.random.default_rng(hold_ss))

    def draw(self, rng):
        self._ensure()
        u, v = self._model.draw(rng, self.cfg.n_cal)
        return KpiDataset(zip(self._model.ids, self._model.kpis(u, v))), self._truth

    def __getstate__(self):
        self._ensure()
        return self.__dict__

    def to_dict(self) -> dict:
        c = self.cfg
        return {"name": "linear-gaussian", "K": len(c.lambda_grid), "n": c.n_cal,
                "covariate_dim": c.covariate_dim, "n_train": c.n_train,
                "lambda_range": [c.lambda_grid[0], c.lambda_grid[-1]],
                "holdout": c.holdout_size, "seed": c.seed}


# ---------------------------------------------------------------- simulation


@dataclass(frozen=True)
class FcrReport:
    trials: int
    fcp_values: tuple
    method: str
    scenario: dict
    seed: int
    mean_radius: float | None = None
    selection_rule: str = ""
    delta: float | None = None

    @property
    def fcr_estimate(self) -> float:
        return float(np.mean(self.fcp_values))

    @property
    def std_error(self) -> float:
        if self.trials < 2:
            return 0.0
        return float(np.std(self.fcp_values, ddof=1) / math.sqrt(self.trials))

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "fcr": self.fcr_estimate,
            "stderr": self.std_error,
            "fcp": list(self.fcp_values),
            "method": self.method,
            "scenario": self.scenario,
            "seed": self.seed,
            "selection": self.selection_rule,
            "delta": self.delta,
            "mean_radius": self.mean_radius,
        }


def _trial(job):
    scenario, method, rule, delta, tau, split_fraction, alpha, seed, t = job
    rng = np.random.default_rng(np.random.SeedSequence([seed, t]))
    data, truth = scenario.draw(rng)
    split_seed = int(rng.integers(2**63))
    res = evaluate_pipeline(data, truth, method, rule, delta, (), tau,
                            split_fraction, split_seed, alpha)
    return res.fcp, res.mean_radius


def simulate_fcr(scenario, method: str, selection_rule="top-m:10", delta: float = 0.1,
                 trials: int = 1000, seed: int = 0, workers: int = 1, tau="auto",
                 split_fraction: float | None = 0.5, alpha: float | None = None) -> FcrReport:
    """Monte Carlo estimate of the false coverage rate.

    Trial ``t`` draws its data from the substream ``(seed, t)``, so the
    report does not depend on ``workers``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    method = canonical_method(method)
    rule = parse_selection_rule(selection_rule)
    jobs = [(scenario, method, rule, delta, tau, split_fraction, alpha, seed, t)
            for t in range(trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trial, jobs, chunksize=max(1, trials // (4 * workers))))
    else:
        results = [_trial(j) for j in jobs]
    radii = [r for _, r in results if r is not None]
    return FcrReport(
        trials=trials,
        fcp_values=tuple(float(f) for f, _ in results),
        method=method,
        scenario=scenario.to_dict(),
        seed=seed,
        mean_radius=float(np.mean(radii)) if radii else None,
        selection_rule=str(rule),
        delta=delta,
    )


# ------------------------------------------------------------ width analytics


@dataclass(frozen=True)
class WidthComparison:
    ratio: float
    lemma2_threshold: float
    corollary_threshold: float
    ps_width: float
    ss_width: float
    ps_narrower: bool
    tau: float

    def to_dict(self) -> dict:
        return {
            "ratio": self.ratio,
            "lemma2_threshold": self.lemma2_threshold,
            "corollary_threshold": self.corollary_threshold,
            "ps_width": self.ps_width,
            "ss_width": self.ss_width,
            "ps_narrower": self.ps_narrower,
            "tau": self.tau,
        }


def ratio_threshold(num_configs, selected_size, delta, c: ECalibrator) -> float:
    """Largest ``n_eval / n`` for which the calibrated full-data band is narrower."""
    y = num_configs / (delta * selected_size)
    return math.log(2.0 * y) / (math.log(2.0) - log_calibrator_inverse(c, y))


def envelope_threshold(num_configs, selected_size, delta) -> float:
    """Necessary ratio bound for any power calibrator (via the envelope)."""
    ratio = delta * selected_size / num_configs
    w = lambert_w_lower(-ratio * INV_E)
    return math.log(2.0 / ratio) / (math.log(2.0) - w)


def width_comparison(n: int, n_eval: int, num_configs: int, selected_size: int,
                     delta: float, c: ECalibrator) -> WidthComparison:
    if not 1 <= n_eval <= n:
        raise ValueError("need 1 <= n_eval <= n")
    ratio = n_eval / n
    thr = ratio_threshold(num_configs, selected_size, delta, c)
    cor = envelope_threshold(num_configs, selected_size, delta)
    ps = ps_band_width(n, num_configs, selected_size, delta, c)
    ss = ss_band_width(n_eval, num_configs, selected_size, delta)
    by_ratio, by_width = ratio < thr, ps < ss
    if by_ratio != by_width and not math.isclose(ratio, thr, rel_tol=1e-12):
        raise ArithmeticError(f"inconsistent width comparison at ratio={ratio}, threshold={thr}")
    return WidthComparison(ratio, thr, cor, ps, ss, by_width, c.tau)


def width_sweep(n: int, num_configs: int, selected_size: int, delta: float,
                taus: Sequence, ratios: Sequence[float]) -> list[dict]:
    """Rows ``ratio, ss_width, ps_width[tau]`` with ``n_eval = ratio * n``.

    ``taus`` may contain ``"auto"``; the ps columns are constant in the ratio.
    """
    ps = {}
    for t in taus:
        value, _ = _resolve_tau(t, delta, num_configs, selected_size)
        name = "ps_width_tau=auto" if t == "auto" else f"ps_width_tau={value:g}"
        ps[name] = ps_band_width(n, num_configs, selected_size, delta, ECalibrator(value))
    rows = []
    for r in ratios:
        ss = ss_band_width(r * n, num_configs, selected_size, delta) if r > 0 else math.inf
        row = {"ratio": float(r), "ss_width": ss}
        row.update(ps)
        rows.append(row)
    return rows
