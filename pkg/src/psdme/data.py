"""KPI datasets, empirical CDFs, reference CDFs and synthetic scenarios.

KPIs are negatively oriented: lower values are better.  Every configuration
holds its own ordered sample; samples of different configurations may be
correlated (for instance when they are computed on shared inputs).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import ndtr

__all__ = [
    "DatasetError",
    "KpiDataset",
    "SplitDataset",
    "EmpiricalCdf",
    "TrueCdf",
    "SynthLinearGaussianConfig",
    "LinearGaussianModel",
    "load_dataset",
    "save_dataset",
    "empirical_cdf",
    "split_dataset",
    "synth_gaussian_grid",
    "fit_linear_gaussian_model",
    "synth_linear_gaussian",
    "true_cdf_eval",
]

# Maximum number of knots kept in a holdout table proxy.
TABLE_PROXY_KNOTS = 1024


class DatasetError(ValueError):
    """Raised for malformed or invalid KPI data."""


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


class KpiDataset:
    """Ordered mapping ``config_id -> samples`` of KPI observations.

    Parameters
    ----------
    entries : iterable of (str, array_like)
        Configurations in order.  Ids must be unique, every configuration
        needs at least one finite sample.
    """

    __slots__ = ("_ids", "_samples")

    def __init__(self, entries: Iterable[tuple[str, Sequence[float]]]):
        ids: list[str] = []
        samples: list[np.ndarray] = []
        seen = set()
        for config_id, values in entries:
            config_id = str(config_id)
            if config_id in seen:
                raise DatasetError(f"duplicate config_id {config_id!r}")
            seen.add(config_id)
            arr = _frozen(values)
            if arr.ndim != 1 or arr.size == 0:
                raise DatasetError(f"config {config_id!r} has no samples")
            if not np.all(np.isfinite(arr)):
                raise DatasetError(f"config {config_id!r} has a non-finite value")
            ids.append(config_id)
            samples.append(arr)
        self._ids = tuple(ids)
        self._samples = tuple(samples)

    @classmethod
    def from_dict(cls, mapping: dict) -> "KpiDataset":
        return cls(mapping.items())

    @property
    def ids(self) -> tuple[str, ...]:
        return self._ids

    @property
    def sizes(self) -> dict[str, int]:
        return {k: v.size for k, v in zip(self._ids, self._samples)}

    def __len__(self) -> int:
        return len(self._ids)

    def __iter__(self):
        return iter(self._ids)

    def __contains__(self, config_id) -> bool:
        return config_id in self._ids

    def __getitem__(self, config_id: str) -> np.ndarray:
        try:
            return self._samples[self._ids.index(config_id)]
        except ValueError:
            raise KeyError(config_id) from None

    def items(self):
        return zip(self._ids, self._samples)

    def means(self) -> np.ndarray:
        return np.array([s.mean() for s in self._samples])

    def subset(self, ids: Iterable[str]) -> "KpiDataset":
        return KpiDataset((i, self[i]) for i in ids)

    def __eq__(self, other) -> bool:
        if not isinstance(other, KpiDataset):
            return NotImplemented
        return self._ids == other._ids and all(
            np.array_equal(a, b) for a, b in zip(self._samples, other._samples)
        )

    def __repr__(self) -> str:
        return f"KpiDataset(K={len(self)}, n={list(self.sizes.values())[:5]}...)"


@dataclass(frozen=True)
class SplitDataset:
    """Disjoint selection / evaluation partition of a :class:`KpiDataset`."""

    selection_part: KpiDataset
    evaluation_part: KpiDataset
    indices: dict = field(repr=False)  # config_id -> (sel_idx, eval_idx)
    seed: int = 0


@dataclass(frozen=True, eq=False)
class EmpiricalCdf:
    """Right-continuous step CDF of a sample.

    ``ecdf(x)`` counts the fraction of samples ``<= x``; ``ecdf.left(x)``
    is the left limit (fraction ``< x``).
    """

    sorted_values: np.ndarray

    @property
    def n(self) -> int:
        return self.sorted_values.size

    def __call__(self, x):
        return np.searchsorted(self.sorted_values, x, side="right") / self.n

    def left(self, x):
        return np.searchsorted(self.sorted_values, x, side="left") / self.n

    def knots(self) -> np.ndarray:
        """Distinct jump locations."""
        return np.unique(self.sorted_values)


def empirical_cdf(samples) -> EmpiricalCdf:
    arr = np.asarray(samples, dtype=float).ravel()
    if arr.size == 0:
        raise DatasetError("empirical CDF needs at least one sample")
    if not np.all(np.isfinite(arr)):
        raise DatasetError("non-finite sample")
    return EmpiricalCdf(_frozen(np.sort(arr)))


class TrueCdf:
    """Reference CDF used for simulation and coverage checks.

    Three kinds exist: ``analytic-gaussian`` (mean, stddev),
    ``analytic-uniform01`` and ``table``.  A table is piecewise linear between
    its knots, 0 below the first knot and 1 from the last knot on.  Repeated
    knots encode jumps; evaluation is right-continuous.
    """

    def __init__(self, kind: str, mean=0.0, stddev=1.0, knots=None, values=None):
        self.kind = kind
        if kind == "analytic-gaussian":
            if not stddev > 0:
                raise ValueError("stddev must be positive")
            self.mean, self.stddev = float(mean), float(stddev)
        elif kind == "analytic-uniform01":
            pass
        elif kind == "table":
            k = np.asarray(knots, dtype=float)
            v = np.asarray(values, dtype=float)
            if k.ndim != 1 or k.shape != v.shape or k.size == 0:
                raise ValueError("table knots and values must be equal-length 1-d")
            if np.any(np.diff(k) < 0) or np.any(np.diff(v) < 0):
                raise ValueError("table knots and values must be nondecreasing")
            if v[0] < 0 or v[-1] > 1:
                raise ValueError("table values must lie in [0, 1]")
            self.knots, self.values = _frozen(k), _frozen(v)
        else:
            raise ValueError(f"unknown TrueCdf kind {kind!r}")

    @classmethod
    def gaussian(cls, mean: float, stddev: float) -> "TrueCdf":
        return cls("analytic-gaussian", mean=mean, stddev=stddev)

    @classmethod
    def uniform01(cls) -> "TrueCdf":
        return cls("analytic-uniform01")

    @classmethod
    def table(cls, knots, values) -> "TrueCdf":
        return cls("table", knots=knots, values=values)

    @property
    def breakpoints(self) -> np.ndarray:
        """Points where the CDF may fail to be linear or continuous."""
        if self.kind == "table":
            return self.knots
        return np.empty(0)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "analytic-gaussian":
            return ndtr((x - self.mean) / self.stddev)
        if self.kind == "analytic-uniform01":
            return np.clip(x, 0.0, 1.0)
        return self._table(x, side="right")

    def left(self, x):
        """Left limit ``F(x-)``."""
        if self.kind == "table":
            return self._table(np.asarray(x, dtype=float), side="left")
        return self(x)

    def _table(self, x, side):
        k, v = self.knots, self.values
        i = np.searchsorted(k, x, side=side)
        inner = (i > 0) & (i < k.size)
        j = np.clip(i, 1, k.size - 1)
        x0, x1 = k[j - 1], k[j]
        y0, y1 = v[j - 1], v[j]
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            t = np.where(x1 > x0, (x - x0) / (x1 - x0), 1.0)
        out = np.where(inner, y0 + t * (y1 - y0), np.where(i == 0, 0.0, 1.0))
        return np.clip(out, 0.0, 1.0)

    def to_dict(self) -> dict:
        if self.kind == "analytic-gaussian":
            return {"kind": self.kind, "mean": self.mean, "stddev": self.stddev}
        if self.kind == "table":
            return {"kind": self.kind, "knots": self.knots.tolist(),
                    "values": self.values.tolist()}
        return {"kind": self.kind}

    def __repr__(self) -> str:
        if self.kind == "analytic-gaussian":
            return f"TrueCdf.gaussian({self.mean!r}, {self.stddev!r})"
        if self.kind == "table":
            return f"TrueCdf.table(<{self.knots.size} knots>)"
        return "TrueCdf.uniform01()"


def true_cdf_eval(f: TrueCdf, x: float) -> float:
    return float(f(x))


def table_proxy(samples, max_knots: int = TABLE_PROXY_KNOTS) -> TrueCdf:
    """Continuous piecewise-linear CDF interpolating empirical quantiles."""
    probs = np.linspace(0.0, 1.0, min(max_knots, np.size(samples)))
    knots = np.quantile(samples, probs)
    return TrueCdf.table(knots, probs)


# ---------------------------------------------------------------- file I/O


def load_dataset(path, format: str | None = None) -> KpiDataset:
    """Read a dataset from CSV (``config_id,value``) or JSON.

    Raises
    ------
    DatasetError
        On malformed content.  ``OSError`` propagates for unreadable files.
    """
    path = Path(path)
    fmt = format or ("json" if path.suffix.lower() == ".json" else "csv")
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        raise DatasetError(f"{path}: empty file")
    if fmt == "csv":
        return _parse_csv(text, path)
    if fmt == "json":
        return _parse_json(text, path)
    raise DatasetError(f"unknown format {fmt!r}")


def _parse_csv(text: str, path) -> KpiDataset:
    rows = csv.reader(text.splitlines())
    header = next(rows)
    if [h.strip() for h in header] != ["config_id", "value"]:
        raise DatasetError(f"{path}: header must be 'config_id,value', got {header}")
    groups: dict[str, list[float]] = {}
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != 2:
            raise DatasetError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
        try:
            value = float(row[1])
        except ValueError:
            raise DatasetError(f"{path}:{lineno}: bad value {row[1]!r}") from None
        if not math.isfinite(value):
            raise DatasetError(f"{path}:{lineno}: non-finite value {row[1]!r}")
        groups.setdefault(row[0].strip(), []).append(value)
    if not groups:
        raise DatasetError(f"{path}: no data rows")
    return KpiDataset(groups.items())


def _parse_json(text: str, path) -> KpiDataset:
    try:
        doc = json.loads(text)
        configs = doc["configs"]
        entries = [(c["id"], c["samples"]) for c in configs]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DatasetError(f"{path}: malformed dataset JSON ({exc})") from None
    for cid, samples in entries:
        if not isinstance(cid, str) or not isinstance(samples, list):
            raise DatasetError(f"{path}: bad entry for {cid!r}")
        if any(isinstance(s, bool) or not isinstance(s, (int, float)) for s in samples):
            raise DatasetError(f"{path}: non-numeric sample in {cid!r}")
    if not entries:
        raise DatasetError(f"{path}: no configs")
    return KpiDataset(entries)


def dataset_to_json(data: KpiDataset) -> dict:
    return {"configs": [{"id": k, "samples": v.tolist()} for k, v in data.items()]}


def save_dataset(data: KpiDataset, path, format: str | None = None) -> None:
    path = Path(path)
    fmt = format or ("json" if path.suffix.lower() == ".json" else "csv")
    if fmt == "json":
        path.write_text(json.dumps(dataset_to_json(data)), encoding="utf-8")
    elif fmt == "csv":
        path.write_text(dataset_to_csv(data), encoding="utf-8")
    else:
        raise DatasetError(f"unknown format {fmt!r}")


def dataset_to_csv(data: KpiDataset) -> str:
    lines = ["config_id,value"]
    for cid, samples in data.items():
        lines.extend(f"{cid},{v!r}" for v in samples.tolist())
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- splitting


def split_dataset(data: KpiDataset, sel_fraction: float, seed: int = 0) -> SplitDataset:
    """Randomly partition every configuration into selection and evaluation parts.

    ``floor(sel_fraction * n_k)`` samples go to selection, the rest to
    evaluation.  The partition depends only on ``seed``.
    """
    if not 0 < sel_fraction < 1:
        raise DatasetError("sel_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    sel, ev, idx = [], [], {}
    for cid, samples in data.items():
        n = samples.size
        n_sel = math.floor(sel_fraction * n)
        if not 1 <= n_sel <= n - 1:
            raise DatasetError(f"config {cid!r} with n={n} cannot be split")
        perm = rng.permutation(n)
        s_idx, e_idx = np.sort(perm[:n_sel]), np.sort(perm[n_sel:])
        sel.append((cid, samples[s_idx]))
        ev.append((cid, samples[e_idx]))
        idx[cid] = (s_idx, e_idx)
    return SplitDataset(KpiDataset(sel), KpiDataset(ev), idx, seed)


# --------------------------------------------------------------- scenarios


def synth_gaussian_grid(num_configs: int, means, stddevs, n_per_config: int,
                        seed: int = 0, rng=None):
    """Independent Gaussian KPIs per configuration with their exact CDFs."""
    means = np.asarray(means, dtype=float)
    stddevs = np.asarray(stddevs, dtype=float)
    if means.shape != (num_configs,) or stddevs.shape != (num_configs,):
        raise ValueError("means and stddevs must have num_configs entries")
    if np.any(stddevs <= 0):
        raise ValueError("stddevs must be positive")
    if n_per_config < 1:
        raise ValueError("n_per_config must be >= 1")
    rng = np.random.default_rng(seed) if rng is None else rng
    draws = rng.standard_normal((num_configs, n_per_config))
    draws = means[:, None] + stddevs[:, None] * draws
    width = len(str(num_configs - 1))
    ids = [f"g{k:0{width}d}" for k in range(num_configs)]
    data = KpiDataset(zip(ids, draws))
    return data, [TrueCdf.gaussian(m, s) for m, s in zip(means, stddevs)]


@dataclass(frozen=True)
class SynthLinearGaussianConfig:
    """Ridge-regression scenario: KPI is the squared prediction error.

    ``lambda_grid`` defaults to 50 log-spaced values over ``[1e-4, 1e2]``.
    """

    covariate_dim: int = 10
    n_train: int = 600
    lambda_grid: tuple = tuple(np.logspace(-4, 2, 50))
    n_cal: int = 20
    seed: int = 0
    holdout_size: int = 100_000

    def __post_init__(self):
        for name in ("covariate_dim", "n_train", "n_cal", "holdout_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        grid = np.asarray(self.lambda_grid, dtype=float)
        if grid.ndim != 1 or grid.size == 0:
            raise ValueError("lambda_grid must be a nonempty list")
        if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
            raise ValueError("lambda_grid must be strictly positive and increasing")
        object.__setattr__(self, "lambda_grid", tuple(float(v) for v in grid))


@dataclass(frozen=True, eq=False)
class LinearGaussianModel:
    """Fixed coefficient vector and the ridge weights fitted for every lambda."""

    beta: np.ndarray
    weights: np.ndarray  # (K, d)
    lambdas: np.ndarray

    @property
    def ids(self) -> list[str]:
        width = len(str(len(self.lambdas) - 1))
        return [f"k{k:0{width}d}" for k in range(len(self.lambdas))]

    def draw(self, rng, size: int):
        d = self.beta.size
        u = rng.standard_normal((size, d))
        v = u @ self.beta + rng.standard_normal(size)
        return u, v

    def kpis(self, u, v) -> np.ndarray:
        """Squared errors, shape (K, len(v))."""
        return (v[None, :] - self.weights @ u.T) ** 2


def _ridge_weights(u, v, lambdas) -> np.ndarray:
    gram = u.T @ u
    rhs = u.T @ v
    eye = np.eye(gram.shape[0])
    out = []
    for lam in lambdas:
        try:
            out.append(np.linalg.solve(gram + lam * eye, rhs))
        except np.linalg.LinAlgError:
            raise ValueError(f"singular ridge system at lambda={lam}") from None
    return np.array(out)


def _scenario_streams(seed: int):
    model_ss, cal_ss, hold_ss = np.random.SeedSequence(seed).spawn(3)
    return model_ss, cal_ss, hold_ss


def fit_linear_gaussian_model(cfg: SynthLinearGaussianConfig) -> LinearGaussianModel:
    """Draw beta and one training set, then fit a ridge model per lambda."""
    rng = np.random.default_rng(_scenario_streams(cfg.seed)[0])
    beta = rng.standard_normal(cfg.covariate_dim)
    u = rng.standard_normal((cfg.n_train, cfg.covariate_dim))
    v = u @ beta + rng.standard_normal(cfg.n_train)
    lambdas = np.asarray(cfg.lambda_grid)
    return LinearGaussianModel(beta, _ridge_weights(u, v, lambdas), lambdas)


def linear_gaussian_truth(model: LinearGaussianModel, holdout_size: int, rng) -> list[TrueCdf]:
    u, v = model.draw(rng, holdout_size)
    return [table_proxy(row) for row in model.kpis(u, v)]


def synth_linear_gaussian(cfg: SynthLinearGaussianConfig):
    """Calibration KPIs of all ridge models on one shared calibration set.

    Returns the dataset and, per configuration, a table CDF built from an
    independent holdout of ``cfg.holdout_size`` points.
    """
    model = fit_linear_gaussian_model(cfg)
    _, cal_ss, hold_ss = _scenario_streams(cfg.seed)
    u, v = model.draw(np.random.default_rng(cal_ss), cfg.n_cal)
    data = KpiDataset(zip(model.ids, model.kpis(u, v)))
    truth = linear_gaussian_truth(model, cfg.holdout_size, np.random.default_rng(hold_ss))
    return data, truth
