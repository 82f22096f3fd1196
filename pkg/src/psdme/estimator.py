"""Estimator front end with the scikit-learn parameter protocol."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ._validation import check_kpi_dataset, check_open_unit, check_tau
from .bands import canonical_method, miscovered
from .posthoc import GuaranteedKpi, best_over_selection, fcp, evaluate_pipeline


class PostSelectionBands(BaseEstimator):
    """CDF confidence bands for the configurations picked by a selection rule.

    Parameters
    ----------
    method : {"ps", "ss", "naive", "bj"}
        Band construction.  ``ps`` reuses all data with an e-value
        correction, ``ss`` splits every configuration, ``naive`` reuses all
        data without correction, ``bj`` builds Berk-Jones bands at the
        calibrated level.
    delta : float
        Target false coverage rate.
    tau : "auto" or float
        Power calibrator exponent (``ps`` and ``bj``).
    alpha : float, optional
        Explicit per-band level for ``bj``; overrides the calibrated level.
    selection : str or callable
        ``"top-m:INT"`` or a callable mapping a KpiDataset to selected ids.
    split_ratio : float, optional
        Fraction of every configuration used for selection (``ss`` only).
    random_state : int
        Seed of the split.

    Attributes
    ----------
    selection_ : SelectionOutcome
    bands_ : tuple of ConfidenceBand
    tau_ : float or None
    heuristic_optimal_ : bool
        True when ``tau="auto"`` was resolved with a data-dependent ``|S|``.
    """

    def __init__(self, method="ps", delta=0.1, tau="auto", alpha=None,
                 selection="top-m:10", split_ratio=None, random_state=0):
        self.method = method
        self.delta = delta
        self.tau = tau
        self.alpha = alpha
        self.selection = selection
        self.split_ratio = split_ratio
        self.random_state = random_state

    def fit(self, X, y=None):
        data = check_kpi_dataset(X)
        method = canonical_method(self.method)
        delta = check_open_unit(self.delta, "delta")
        tau = check_tau(self.tau)
        alpha = None if self.alpha is None else check_open_unit(self.alpha, "alpha")
        split = None
        if method == "ss-dme":
            if self.split_ratio is None:
                raise ValueError("method 'ss' needs split_ratio")
            split = check_open_unit(self.split_ratio, "split_ratio")
        result = evaluate_pipeline(data, None, method, self.selection, delta, (),
                                   tau, split, int(self.random_state), alpha)
        self.result_ = result
        self.selection_ = result.selection
        self.bands_ = result.bands
        self.tau_ = result.tau
        self.alpha_ = result.alpha
        self.heuristic_optimal_ = result.heuristic_optimal
        self.n_configs_ = len(data)
        return self

    def _check_fitted(self):
        if not hasattr(self, "bands_"):
            raise NotFittedError("call fit first")

    def transform(self, X):
        """Band values on the KPI grid ``X``: array of shape (|S|, len(X), 2)."""
        self._check_fitted()
        x = np.asarray(X, dtype=float).ravel()
        return np.stack([np.column_stack(b(x)) for b in self.bands_]) if self.bands_ \
            else np.empty((0, x.size, 2))

    def predict(self, gamma) -> GuaranteedKpi:
        """Best guaranteed KPI at failure probability ``gamma``."""
        self._check_fitted()
        if not self.bands_:
            return GuaranteedKpi(check_open_unit(gamma, "gamma"), ())
        return best_over_selection(self.bands_, check_open_unit(gamma, "gamma"))

    def false_coverage_proportion(self, truth) -> float:
        """FCP of the fitted bands against reference CDFs keyed by config id."""
        self._check_fitted()
        return fcp(miscovered(b, truth[b.config_id]) for b in self.bands_)
