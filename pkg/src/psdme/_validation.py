"""Input checks shared by the estimator and the command line."""
from __future__ import annotations

import numbers

import numpy as np

from .data import KpiDataset


def check_open_unit(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise ValueError(f"{name} must be a real number, got {value!r}")
    value = float(value)
    if not 0.0 < value < 1.0:
        raise ValueError(f"{name} must lie in (0, 1), got {value}")
    return value


def check_count(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_tau(tau):
    if tau is None or tau == "auto":
        return "auto"
    return check_open_unit(tau, "tau")


def check_kpi_dataset(X) -> KpiDataset:
    """Coerce ``X`` to a :class:`KpiDataset`.

    Accepted: a KpiDataset, a mapping ``id -> samples``, a long table with
    ``config_id`` and ``value`` columns (e.g. a DataFrame), or a 2-d array
    with one row per configuration.
    """
    if isinstance(X, KpiDataset):
        return X
    if hasattr(X, "columns") and "config_id" in X.columns and "value" in X.columns:
        groups: dict = {}
        for cid, v in zip(X["config_id"], X["value"]):
            groups.setdefault(str(cid), []).append(v)
        return KpiDataset(groups.items())
    if isinstance(X, dict):
        return KpiDataset.from_dict(X)
    arr = np.asarray(X, dtype=float)
    if arr.ndim != 2:
        raise ValueError("expected a KpiDataset, a mapping, a long table or a 2-d array")
    width = len(str(arr.shape[0] - 1))
    return KpiDataset((f"c{k:0{width}d}", row) for k, row in enumerate(arr))
