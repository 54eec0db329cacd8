"""Cross-validated meta-parameter search with outlier-trimmed validation scores.

The driver is :func:`cross_validate`: split the training rows into l folds,
evaluate every grid point on every fold, average the trimmed validation
errors, refit the winner on all training rows, and score the untouched test
set exactly once. Model-specific sweep classes know how to amortize work
across the grid (shared k-means runs, shared kernel eigendecompositions,
shared projection fits) while the winner is always re-fitted through the
plain single-model entry points.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import product
from pathlib import Path

import numpy as np

from .baselines import Projection, fit_pca, fit_pls, project_rows, transform
from .dataset import Dataset
from .errors import DataError, NumericalError
from .models import (
    LinearModel,
    _cluster_widths,
    _kernel_from_sq,
    fit_linear,
    fit_lssvm,
    fit_rbfn,
    kmeans,
    solve_rbf_weights,
    sq_dists,
)

__all__ = [
    "MetaGrid",
    "GridPointResult",
    "CvReport",
    "TestSetGuard",
    "ProjectedLinear",
    "LinearSweep",
    "ComponentSweep",
    "RbfnSweep",
    "LssvmSweep",
    "nmse",
    "pooled_target_variance",
    "kfold_split",
    "trim_outliers",
    "sweep_folds",
    "select_winner",
    "cross_validate",
    "median_pairwise_distance",
    "default_component_counts",
    "default_centroid_counts",
    "default_wsf_values",
    "default_sigma_values",
    "default_gamma_values",
    "save_report",
    "load_report",
    "grid_csv",
]

TRIM_PERCENTILE = 99.0


# ---------------------------------------------------------------------------
# Metric, folds, trimming


def nmse(predictions, targets, var_y_all: float) -> float:
    """Mean squared error divided by a fixed target-variance normalizer.

    The normalizer is the variance of the target over every available
    sample (training and test pooled) so that scores from different data
    subsets are directly comparable. It must therefore be computed once
    per experiment and passed to every call.
    """
    p = np.asarray(predictions, dtype=np.float64).ravel()
    t = np.asarray(targets, dtype=np.float64).ravel()
    if p.shape != t.shape or p.size == 0:
        raise ValueError(
            f"predictions and targets must be equal non-empty vectors, "
            f"got {p.shape} and {t.shape}"
        )
    if not var_y_all > 0.0:
        raise ValueError(f"variance normalizer must be positive, got {var_y_all}")
    return float(np.mean((p - t) ** 2) / var_y_all)


def pooled_target_variance(train: Dataset, test: Dataset) -> float:
    """Unbiased variance of the target over training and test rows pooled."""
    pooled = np.concatenate([train.y, test.y])
    v = float(pooled.var(ddof=1))
    if not v > 0.0:
        raise DataError("pooled target variance is zero; nothing to normalize by")
    return v


def kfold_split(n: int, l: int, seed: int) -> list[np.ndarray]:
    """Random partition of range(n) into l validation folds of near-equal size.

    Fold sizes differ by at most one (larger folds first); assignment
    depends only on (n, l, seed), never on data values. Each returned
    index array is sorted.
    """
    if l < 2:
        raise ValueError(f"need at least 2 folds, got {l}")
    if l > n:
        raise ValueError(f"cannot split {n} samples into {l} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, l)]


def trim_outliers(errors) -> np.ndarray:
    """Indices of the errors kept after dropping extreme deviations.

    A sample is dropped when the absolute deviation of its error from the
    median error lies strictly above the 99th percentile (linear
    interpolation) of those deviations. Ties at the threshold are kept,
    so at most about 1% of the samples are removed.
    """
    e = np.asarray(errors, dtype=np.float64).ravel()
    if e.size == 0:
        raise ValueError("cannot trim an empty error vector")
    dev = np.abs(e - np.median(e))
    threshold = np.percentile(dev, TRIM_PERCENTILE)
    return np.flatnonzero(dev <= threshold)


def _point_nmse(errors: np.ndarray, var_y: float, trim: bool) -> float:
    if trim:
        errors = errors[trim_outliers(errors)]
    return float(np.mean(errors**2) / var_y)


def _batch_nmse(errors: np.ndarray, var_y: float, trim: bool) -> np.ndarray:
    """Row-wise NMSE for a (grid, samples) error matrix, optionally trimmed."""
    if not trim:
        return (errors**2).mean(axis=1) / var_y
    dev = np.abs(errors - np.median(errors, axis=1, keepdims=True))
    threshold = np.percentile(dev, TRIM_PERCENTILE, axis=1, keepdims=True)
    mask = dev <= threshold
    return (errors**2 * mask).sum(axis=1) / mask.sum(axis=1) / var_y


# ---------------------------------------------------------------------------
# Test-set access control


class TestSetGuard:
    """Hands out the test set exactly once; later reads raise.

    Model selection must never see the test rows, so the guard counts
    accesses and the report records the final count.
    """

    __test__ = False  # not a test case despite the name

    def __init__(self, d: Dataset) -> None:
        self._dataset = d
        self.reads = 0

    @property
    def n_samples(self) -> int:
        return self._dataset.n_samples

    def take(self) -> Dataset:
        self.reads += 1
        if self.reads > 1:
            raise DataError("test set was read more than once in one experiment")
        return self._dataset


# ---------------------------------------------------------------------------
# Grids


@dataclass(frozen=True)
class MetaGrid:
    """Named axes of candidate meta-parameter values for one model kind.

    The grid order is the cartesian product with the first axis slowest,
    and ties in validation score are always resolved toward the earlier
    grid point.
    """

    kind: str
    axes: tuple[tuple[str, tuple[float, ...]], ...]

    def __post_init__(self) -> None:
        if not self.axes:
            raise ValueError("a meta-parameter grid needs at least one axis")
        names = [name for name, _ in self.axes]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate axis names in {names}")
        for name, values in self.axes:
            if len(values) == 0:
                raise ValueError(f"axis {name!r} has no candidate values")

    def __len__(self) -> int:
        return math.prod(len(values) for _, values in self.axes)

    def points(self) -> list[dict]:
        names = [name for name, _ in self.axes]
        grids = [values for _, values in self.axes]
        return [dict(zip(names, combo)) for combo in product(*grids)]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "axes": [[name, list(values)] for name, values in self.axes],
        }

    @staticmethod
    def from_dict(doc: dict) -> "MetaGrid":
        return MetaGrid(
            kind=doc["kind"],
            axes=tuple((name, tuple(values)) for name, values in doc["axes"]),
        )


def median_pairwise_distance(x: np.ndarray) -> float:
    """Median Euclidean distance over all distinct row pairs."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least 2 rows for a pairwise distance")
    d2 = sq_dists(x, x)
    upper = d2[np.triu_indices(n, k=1)]
    return float(np.median(np.sqrt(upper)))


def _min_fold_learn_size(n: int, l: int) -> int:
    # The largest validation fold leaves the smallest learning set behind.
    return n - math.ceil(n / l)


def default_component_counts(n_train: int, n_variables: int, l: int) -> tuple[int, ...]:
    """1..c where c is the most components any learning fold can support."""
    limit = min(_min_fold_learn_size(n_train, l) - 1, n_variables)
    if limit < 1:
        raise ValueError(
            f"no feasible component count for {n_train} samples in {l} folds"
        )
    return tuple(range(1, limit + 1))


def default_centroid_counts(n_train: int, l: int, limit: int = 30) -> tuple[int, ...]:
    cap = min(limit, _min_fold_learn_size(n_train, l))
    return tuple(range(1, cap + 1))


def default_wsf_values(count: int = 15) -> tuple[float, ...]:
    return tuple(float(v) for v in np.geomspace(0.1, 10.0, count))


def default_sigma_values(x: np.ndarray, count: int = 100) -> tuple[float, ...]:
    """Kernel widths log-spaced two decades around the median pair distance."""
    scale = median_pairwise_distance(x)
    if scale <= 0.0:
        raise DataError("median pairwise distance is zero; inputs are degenerate")
    return tuple(float(v) for v in np.geomspace(0.01 * scale, 100.0 * scale, count))


def default_gamma_values(count: int = 300) -> tuple[float, ...]:
    return tuple(float(v) for v in np.geomspace(1e-3, 1e6, count))


# ---------------------------------------------------------------------------
# Sweeps: one class per model family

_SWEEP_ERRORS = (ValueError, DataError, NumericalError, np.linalg.LinAlgError)


@dataclass(frozen=True)
class ProjectedLinear:
    """Linear regression on the scores of a fitted projection."""

    projection: Projection
    model: LinearModel

    def predict(self, x):
        return self.model.predict(project_rows(self.projection, np.atleast_2d(x)))


class LinearSweep:
    """Degenerate grid: ordinary least squares has no meta-parameters."""

    def __init__(self) -> None:
        self.kind = "linear"
        self.grid = MetaGrid("linear", (("variant", ("ols",)),))

    def fit(self, train: Dataset, params: dict) -> LinearModel:
        return fit_linear(train)

    def evaluate_fold(self, learn, valid, var_y, trim_learn, trim_valid):
        nmse_l = np.full(1, np.nan)
        nmse_v = np.full(1, np.nan)
        messages: dict[int, str] = {}
        try:
            m = fit_linear(learn)
        except _SWEEP_ERRORS as exc:
            messages[0] = str(exc)
            return nmse_l, nmse_v, messages
        nmse_l[0] = _point_nmse(m.predict(learn.X) - learn.y, var_y, trim_learn)
        nmse_v[0] = _point_nmse(m.predict(valid.X) - valid.y, var_y, trim_valid)
        return nmse_l, nmse_v, messages


class ComponentSweep:
    """Component-count search for PCA or PLS regression.

    Each fold fits one projection at the largest feasible count; smaller
    counts reuse its leading score columns. Scores from either projection
    are mutually orthogonal, so the least-squares coefficient of each
    component is independent of the others and predictions accumulate
    column by column.
    """

    def __init__(self, projection: str, counts, scale: bool = False) -> None:
        if projection not in ("pca", "pls"):
            raise ValueError(f"unknown projection kind {projection!r}")
        self.projection = projection
        self.scale = bool(scale)
        self.kind = "pcr" if projection == "pca" else "plsr"
        self.grid = MetaGrid(self.kind, (("components", tuple(int(c) for c in counts)),))
        self._counts = [int(c) for c in counts]

    def _fit_projection(self, d: Dataset, n_components: int) -> Projection:
        fit = fit_pca if self.projection == "pca" else fit_pls
        return fit(d, n_components, scale=self.scale)

    def fit(self, train: Dataset, params: dict) -> ProjectedLinear:
        p = self._fit_projection(train, int(params["components"]))
        return ProjectedLinear(p, fit_linear(transform(p, train)))

    def evaluate_fold(self, learn, valid, var_y, trim_learn, trim_valid):
        g = len(self._counts)
        nmse_l = np.full(g, np.nan)
        nmse_v = np.full(g, np.nan)
        messages: dict[int, str] = {}
        cap = min(max(self._counts), learn.n_samples - 1, learn.n_variables)
        if cap < 1:
            for i in range(g):
                messages[i] = "learning fold too small for any component"
            return nmse_l, nmse_v, messages
        try:
            p = self._fit_projection(learn, cap)
        except _SWEEP_ERRORS as exc:
            for i in range(g):
                messages[i] = str(exc)
            return nmse_l, nmse_v, messages
        scores_l = project_rows(p, learn.X)
        scores_v = project_rows(p, valid.X)
        # Components whose training scores carry no energy cannot be
        # regressed on; they bound the usable prefix on rank-deficient folds.
        col2 = (scores_l**2).sum(axis=0)
        floor = 1e-20 * max(1.0, float(col2.max(initial=0.0)))
        usable = 0
        while usable < p.n_components and col2[usable] > floor:
            usable += 1
        beta = scores_l[:, :usable].T @ learn.y / col2[:usable]
        pred_l = np.full(learn.n_samples, learn.y.mean())
        pred_v = np.full(valid.n_samples, learn.y.mean())
        by_count = {c: i for i, c in enumerate(self._counts)}
        for c in range(1, usable + 1):
            pred_l = pred_l + scores_l[:, c - 1] * beta[c - 1]
            pred_v = pred_v + scores_v[:, c - 1] * beta[c - 1]
            i = by_count.get(c)
            if i is None:
                continue
            nmse_l[i] = _point_nmse(pred_l - learn.y, var_y, trim_learn)
            nmse_v[i] = _point_nmse(pred_v - valid.y, var_y, trim_valid)
        for i, c in enumerate(self._counts):
            if c > usable:
                messages[i] = (
                    f"only {usable} usable components on this learning fold"
                )
        return nmse_l, nmse_v, messages


class RbfnSweep:
    """Centroid-count and width-factor search for RBF networks.

    k-means depends only on the inputs and the centroid count, so each
    count is clustered once per fold and every width factor reuses the
    centroids, the unscaled widths, and the distance matrices.
    """

    def __init__(self, centroid_counts, wsf_values, seed: int = 0) -> None:
        self.kind = "rbfn"
        self.seed = int(seed)
        ks = tuple(int(k) for k in centroid_counts)
        ws = tuple(float(w) for w in wsf_values)
        self.grid = MetaGrid("rbfn", (("centroids", ks), ("wsf", ws)))
        self._ks = ks
        self._ws = ws

    def fit(self, train: Dataset, params: dict):
        return fit_rbfn(train, int(params["centroids"]), float(params["wsf"]), self.seed)

    def evaluate_fold(self, learn, valid, var_y, trim_learn, trim_valid):
        g = len(self._ks) * len(self._ws)
        nmse_l = np.full(g, np.nan)
        nmse_v = np.full(g, np.nan)
        messages: dict[int, str] = {}
        for ki, k in enumerate(self._ks):
            base = ki * len(self._ws)
            try:
                centers, assign = kmeans(learn.X, k, self.seed)
                unit_widths = _cluster_widths(learn.X, centers, assign, 1.0)
                d2_valid = sq_dists(valid.X, centers)
            except _SWEEP_ERRORS as exc:
                for wi in range(len(self._ws)):
                    messages[base + wi] = str(exc)
                continue
            for wi, wsf in enumerate(self._ws):
                widths = wsf * unit_widths
                try:
                    weights, bias = solve_rbf_weights(
                        learn.X, learn.y, centers, widths
                    )
                except _SWEEP_ERRORS as exc:
                    messages[base + wi] = str(exc)
                    continue
                phi_l = _kernel_from_sq(sq_dists(learn.X, centers), widths)
                phi_v = _kernel_from_sq(d2_valid, widths)
                err_l = phi_l @ weights + bias - learn.y
                err_v = phi_v @ weights + bias - valid.y
                nmse_l[base + wi] = _point_nmse(err_l, var_y, trim_learn)
                nmse_v[base + wi] = _point_nmse(err_v, var_y, trim_valid)
        return nmse_l, nmse_v, messages


class LssvmSweep:
    """Kernel-width and regularization search for LS-SVM.

    For a fixed width the dual matrix differs across gamma only on its
    diagonal, so one eigendecomposition per (width, fold) serves the whole
    gamma axis: with kernel eigenpairs (V, D) the dual solve reduces to
    elementwise work on 1/(D + 1/gamma).
    """

    def __init__(self, sigma_values, gamma_values) -> None:
        self.kind = "lssvm"
        sigmas = tuple(float(s) for s in sigma_values)
        gammas = tuple(float(g) for g in gamma_values)
        self.grid = MetaGrid("lssvm", (("sigma", sigmas), ("gamma", gammas)))
        self._sigmas = sigmas
        self._gammas = np.asarray(gammas, dtype=np.float64)

    def fit(self, train: Dataset, params: dict):
        return fit_lssvm(train, float(params["sigma"]), float(params["gamma"]))

    def evaluate_fold(self, learn, valid, var_y, trim_learn, trim_valid):
        n_gamma = self._gammas.size
        g = len(self._sigmas) * n_gamma
        nmse_l = np.full(g, np.nan)
        nmse_v = np.full(g, np.nan)
        messages: dict[int, str] = {}
        y = learn.y
        ones = np.ones(learn.n_samples)
        for si, sigma in enumerate(self._sigmas):
            base = si * n_gamma
            omega = _kernel_from_sq(sq_dists(learn.X, learn.X), sigma)
            k_valid = _kernel_from_sq(sq_dists(valid.X, learn.X), sigma)
            try:
                evals, vecs = np.linalg.eigh(omega)
            except np.linalg.LinAlgError as exc:
                for gi in range(n_gamma):
                    messages[base + gi] = str(exc)
                continue
            vy = vecs.T @ y
            v1 = vecs.T @ ones
            with np.errstate(divide="ignore", invalid="ignore"):
                w = 1.0 / (evals[None, :] + 1.0 / self._gammas[:, None])
                bias = (w @ (v1 * vy)) / (w @ (v1 * v1))
                coeff = w * (vy[None, :] - bias[:, None] * v1[None, :])
                lam = coeff @ vecs.T
                err_l = lam @ omega + bias[:, None] - y[None, :]
                err_v = lam @ k_valid.T + bias[:, None] - valid.y[None, :]
                row_l = _batch_nmse(err_l, var_y, trim_learn)
                row_v = _batch_nmse(err_v, var_y, trim_valid)
            ok = np.isfinite(row_l) & np.isfinite(row_v)
            nmse_l[base : base + n_gamma] = np.where(ok, row_l, np.nan)
            nmse_v[base : base + n_gamma] = np.where(ok, row_v, np.nan)
            for gi in np.flatnonzero(~ok):
                messages[base + int(gi)] = (
                    f"dual solve left non-finite scores for sigma={sigma}, "
                    f"gamma={self._gammas[gi]}"
                )
        return nmse_l, nmse_v, messages


# ---------------------------------------------------------------------------
# Reports


@dataclass(frozen=True)
class GridPointResult:
    """Per-fold scores for one meta-parameter combination."""

    index: int
    params: dict
    nmse_l: tuple[float, ...]
    nmse_v: tuple[float, ...]
    error: str | None = None

    @property
    def mean_nmse_v(self) -> float:
        return float(np.mean(self.nmse_v))

    @property
    def mean_nmse_l(self) -> float:
        return float(np.mean(self.nmse_l))


@dataclass(frozen=True)
class CvReport:
    """Everything cross_validate decided and measured, in one record."""

    kind: str
    l: int
    seed: int
    var_y: float
    n_train: int
    n_test: int
    folds: tuple[tuple[int, ...], ...]
    rows: tuple[GridPointResult, ...]
    winner_index: int
    winner_params: dict
    winner_fold_nmse_l: tuple[float, ...]
    winner_fold_nmse_v: tuple[float, ...]
    trimmed_per_fold: tuple[tuple[int, ...], ...]
    nmse_t: float
    test_reads: int
    trim_learn: bool
    trim_valid: bool
    trim_test: bool

    @property
    def mean_nmse_l(self) -> float:
        return float(np.mean(self.winner_fold_nmse_l))

    @property
    def mean_nmse_v(self) -> float:
        return float(np.mean(self.winner_fold_nmse_v))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "l": self.l,
            "seed": self.seed,
            "var_y": self.var_y,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "folds": [list(f) for f in self.folds],
            "grid": [
                {
                    "index": r.index,
                    "params": dict(r.params),
                    "nmse_l": [_none_if_nan(v) for v in r.nmse_l],
                    "nmse_v": [_none_if_nan(v) for v in r.nmse_v],
                    "error": r.error,
                }
                for r in self.rows
            ],
            "winner_index": self.winner_index,
            "winner_params": dict(self.winner_params),
            "winner_fold_nmse_l": list(self.winner_fold_nmse_l),
            "winner_fold_nmse_v": list(self.winner_fold_nmse_v),
            "mean_nmse_l": self.mean_nmse_l,
            "mean_nmse_v": self.mean_nmse_v,
            "trimmed_per_fold": [list(t) for t in self.trimmed_per_fold],
            "nmse_t": self.nmse_t,
            "test_reads": self.test_reads,
            "trim_learn": self.trim_learn,
            "trim_valid": self.trim_valid,
            "trim_test": self.trim_test,
        }

    @staticmethod
    def from_dict(doc: dict) -> "CvReport":
        rows = tuple(
            GridPointResult(
                index=int(r["index"]),
                params=dict(r["params"]),
                nmse_l=tuple(_nan_if_none(v) for v in r["nmse_l"]),
                nmse_v=tuple(_nan_if_none(v) for v in r["nmse_v"]),
                error=r.get("error"),
            )
            for r in doc["grid"]
        )
        return CvReport(
            kind=doc["kind"],
            l=int(doc["l"]),
            seed=int(doc["seed"]),
            var_y=float(doc["var_y"]),
            n_train=int(doc["n_train"]),
            n_test=int(doc["n_test"]),
            folds=tuple(tuple(int(i) for i in f) for f in doc["folds"]),
            rows=rows,
            winner_index=int(doc["winner_index"]),
            winner_params=dict(doc["winner_params"]),
            winner_fold_nmse_l=tuple(float(v) for v in doc["winner_fold_nmse_l"]),
            winner_fold_nmse_v=tuple(float(v) for v in doc["winner_fold_nmse_v"]),
            trimmed_per_fold=tuple(
                tuple(int(i) for i in t) for t in doc["trimmed_per_fold"]
            ),
            nmse_t=float(doc["nmse_t"]),
            test_reads=int(doc["test_reads"]),
            trim_learn=bool(doc["trim_learn"]),
            trim_valid=bool(doc["trim_valid"]),
            trim_test=bool(doc["trim_test"]),
        )


def _none_if_nan(v: float):
    return None if math.isnan(v) else float(v)


def _nan_if_none(v) -> float:
    return math.nan if v is None else float(v)


def save_report(report: CvReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2) + "\n")


def load_report(path: str | Path) -> CvReport:
    return CvReport.from_dict(json.loads(Path(path).read_text()))


def grid_csv(report: CvReport) -> str:
    """Flat (grid point, fold, score) rows for external tooling."""
    lines = ["grid_index,params,fold,nmse_l,nmse_v"]
    for row in report.rows:
        params = ";".join(f"{k}={v}" for k, v in row.params.items())
        for fold_i, (vl, vv) in enumerate(zip(row.nmse_l, row.nmse_v)):
            cl = "" if math.isnan(vl) else repr(vl)
            cv = "" if math.isnan(vv) else repr(vv)
            lines.append(f"{row.index},{params},{fold_i},{cl},{cv}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Driver


def sweep_folds(
    train: Dataset,
    sweep,
    l: int,
    seed: int,
    var_y: float,
    *,
    trim_learn: bool = False,
    trim_valid: bool = True,
    workers: int = 1,
):
    """Score every grid point on every fold; no winner logic, no test data.

    Returns (folds, splits, mat_l, mat_v, messages) with score matrices of
    shape (grid points, folds). Fold results land in preassigned slots, so
    worker count and completion order never change the outcome.
    """
    folds = kfold_split(train.n_samples, l, seed)
    everything = np.arange(train.n_samples)
    splits = [
        (train.take_rows(np.setdiff1d(everything, f)), train.take_rows(f))
        for f in folds
    ]

    def run_fold(i: int):
        learn, valid = splits[i]
        return sweep.evaluate_fold(learn, valid, var_y, trim_learn, trim_valid)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fold_results = list(pool.map(run_fold, range(l)))
    else:
        fold_results = [run_fold(i) for i in range(l)]

    n_points = len(sweep.grid)
    mat_l = np.column_stack([r[0] for r in fold_results])
    mat_v = np.column_stack([r[1] for r in fold_results])
    if mat_l.shape != (n_points, l):
        raise NumericalError(
            f"sweep returned {mat_l.shape[0]} scores for {n_points} grid points"
        )
    return folds, splits, mat_l, mat_v, [r[2] for r in fold_results]


def select_winner(mat_l: np.ndarray, mat_v: np.ndarray) -> int:
    """Grid index minimizing mean validation NMSE over folds.

    A point that failed on any fold is disqualified; exact ties resolve
    to the earliest grid point.
    """
    usable = ~np.isnan(mat_v).any(axis=1) & ~np.isnan(mat_l).any(axis=1)
    if not usable.any():
        raise NumericalError("every grid point failed on at least one fold")
    means = np.where(usable, mat_v.mean(axis=1), np.inf)
    return int(np.argmin(means))


def cross_validate(
    train: Dataset,
    test: Dataset | TestSetGuard,
    sweep,
    l: int,
    seed: int,
    var_y: float,
    *,
    trim_learn: bool = False,
    trim_valid: bool = True,
    trim_test: bool = False,
    workers: int = 1,
):
    """Grid search by l-fold cross-validation; returns (CvReport, model).

    Every grid point is scored on every fold; the winner minimizes the
    mean trimmed validation NMSE (ties go to the earlier grid point; a
    point failing on any fold is disqualified). The winner is then refit
    on all training rows through the model family's plain fitting
    function, and the test set, handed out by its guard exactly once, is
    scored last.
    """
    guard = test if isinstance(test, TestSetGuard) else TestSetGuard(test)
    folds, splits, mat_l, mat_v, messages = sweep_folds(
        train,
        sweep,
        l,
        seed,
        var_y,
        trim_learn=trim_learn,
        trim_valid=trim_valid,
        workers=workers,
    )
    winner_index = select_winner(mat_l, mat_v)
    points = sweep.grid.points()
    winner_params = points[winner_index]

    # The winner is re-fitted per fold through the canonical entry point,
    # which also pins down exactly which validation rows were trimmed.
    winner_l: list[float] = []
    winner_v: list[float] = []
    trimmed: list[tuple[int, ...]] = []
    for fold_idx, (learn, valid) in zip(folds, splits):
        model = sweep.fit(learn, winner_params)
        err_l = np.asarray(model.predict(learn.X)) - learn.y
        err_v = np.asarray(model.predict(valid.X)) - valid.y
        winner_l.append(_point_nmse(err_l, var_y, trim_learn))
        if trim_valid:
            kept = trim_outliers(err_v)
            winner_v.append(float(np.mean(err_v[kept] ** 2) / var_y))
            dropped = np.setdiff1d(np.arange(err_v.size), kept)
        else:
            winner_v.append(float(np.mean(err_v**2) / var_y))
            dropped = np.empty(0, dtype=int)
        trimmed.append(tuple(int(i) for i in fold_idx[dropped]))

    final_model = sweep.fit(train, winner_params)
    held_out = guard.take()
    err_t = np.asarray(final_model.predict(held_out.X)) - held_out.y
    nmse_t = _point_nmse(err_t, var_y, trim_test)

    rows = []
    for i, params in enumerate(points):
        error = None
        for fold_i in range(l):
            if i in messages[fold_i]:
                error = f"fold {fold_i}: {messages[fold_i][i]}"
                break
        rows.append(
            GridPointResult(
                index=i,
                params=params,
                nmse_l=tuple(float(v) for v in mat_l[i]),
                nmse_v=tuple(float(v) for v in mat_v[i]),
                error=error,
            )
        )

    report = CvReport(
        kind=sweep.kind,
        l=l,
        seed=seed,
        var_y=float(var_y),
        n_train=train.n_samples,
        n_test=guard.n_samples,
        folds=tuple(tuple(int(i) for i in f) for f in folds),
        rows=tuple(rows),
        winner_index=winner_index,
        winner_params=winner_params,
        winner_fold_nmse_l=tuple(winner_l),
        winner_fold_nmse_v=tuple(winner_v),
        trimmed_per_fold=tuple(trimmed),
        nmse_t=nmse_t,
        test_reads=guard.reads,
        trim_learn=trim_learn,
        trim_valid=trim_valid,
        trim_test=trim_test,
    )
    return report, final_model
