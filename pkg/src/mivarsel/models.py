"""Regression models: RBF network, least-squares SVM, ordinary linear.

The Gaussian kernel is Phi(x, c, sigma) = exp(-(||x - c|| / (sqrt(2) sigma))^2),
i.e. exp(-||x - c||^2 / (2 sigma^2)), shared by both kernel models.

* RBFN (fit_rbfn): K centroids from a target-blind k-means on the
  inputs, per-centroid widths sigma_k = WSF * (mean distance of the
  cluster's members to the centroid), output weights and bias by least
  squares on the training targets.
* LS-SVM (fit_lssvm): all training points become support points; the
  dual linear system [[0, 1^T], [1, Omega + I/gamma]] [b; Lambda] = [0; y]
  is solved densely, with one iterative-refinement step to tighten the
  optimality residual lambda_i = gamma * (y_i - yhat_i).
* Linear (fit_linear): least squares with intercept; rank-deficient
  inputs get the minimum-norm solution.

Models are immutable after fitting; prediction is a pure function of
(model, x). Each model serializes to a versioned JSON document.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .errors import NumericalError

MODEL_FORMAT = "mivarsel-model"
MODEL_FORMAT_VERSION = 1

_KMEANS_MAX_ITER = 100


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=np.float64)
    if out is a:
        out = out.copy()
    out.flags.writeable = False
    return out


def sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, (len(a), len(b)).

    Uses the expanded product form; tiny negative values from rounding
    are clipped to zero.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    d2 = (
        (a * a).sum(axis=1)[:, None]
        + (b * b).sum(axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    return np.maximum(d2, 0.0)


def _kernel_from_sq(d2: np.ndarray, widths) -> np.ndarray:
    w2 = np.asarray(widths, dtype=np.float64) ** 2
    return np.exp(-d2 / (2.0 * w2))


def rbf_kernel(x, c, sigma: float) -> float:
    """Gaussian kernel between two points; 1 exactly when x equals c."""
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    x = np.asarray(x, dtype=np.float64).ravel()
    c = np.asarray(c, dtype=np.float64).ravel()
    if x.shape != c.shape:
        raise ValueError(f"point dimensions differ: {x.shape} vs {c.shape}")
    d2 = float(((x - c) ** 2).sum())
    return float(np.exp(-d2 / (2.0 * sigma * sigma)))


def _as_points(x, dim: int) -> tuple[np.ndarray, bool]:
    """Coerce a single point or a matrix of points to (n, dim)."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(
            f"expected points of dimension {dim}, got array of shape {np.shape(x)}"
        )
    return arr, single


@dataclass(frozen=True)
class RbfnModel:
    """Weighted sum of Gaussian kernels plus a bias."""

    centroids: np.ndarray
    widths: np.ndarray
    weights: np.ndarray
    bias: float
    wsf: float

    def __post_init__(self) -> None:
        centroids = _frozen(np.atleast_2d(self.centroids))
        widths = _frozen(np.atleast_1d(self.widths))
        weights = _frozen(np.atleast_1d(self.weights))
        k = centroids.shape[0]
        if widths.shape != (k,) or weights.shape != (k,):
            raise ValueError(
                f"inconsistent sizes: {k} centroids, {widths.shape[0]} widths, "
                f"{weights.shape[0]} weights"
            )
        if np.any(widths <= 0.0):
            raise ValueError("all widths must be positive")
        if self.wsf <= 0.0:
            raise ValueError(f"wsf must be positive, got {self.wsf}")
        object.__setattr__(self, "centroids", centroids)
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "weights", weights)

    @property
    def n_centroids(self) -> int:
        return self.centroids.shape[0]

    def predict(self, x):
        return predict_rbfn(self, x)


@dataclass(frozen=True)
class LssvmModel:
    """Kernel expansion over all training points with a bias."""

    support_points: np.ndarray
    coefficients: np.ndarray
    bias: float
    sigma: float
    gamma: float

    def __post_init__(self) -> None:
        support = _frozen(np.atleast_2d(self.support_points))
        coeffs = _frozen(np.atleast_1d(self.coefficients))
        if coeffs.shape[0] != support.shape[0]:
            raise ValueError(
                f"{coeffs.shape[0]} coefficients for {support.shape[0]} support points"
            )
        if self.sigma <= 0.0 or self.gamma <= 0.0:
            raise ValueError(
                f"sigma and gamma must be positive, got sigma={self.sigma}, gamma={self.gamma}"
            )
        object.__setattr__(self, "support_points", support)
        object.__setattr__(self, "coefficients", coeffs)

    def predict(self, x):
        return predict_lssvm(self, x)


@dataclass(frozen=True)
class LinearModel:
    """Affine map: prediction = x . coefficients + intercept."""

    coefficients: np.ndarray
    intercept: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "coefficients", _frozen(np.atleast_1d(self.coefficients)))

    def predict(self, x):
        return predict_linear(self, x)


def kmeans(
    x: np.ndarray, n_clusters: int, seed: int, max_iter: int = _KMEANS_MAX_ITER
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with deterministic seeding from the data points.

    Initial centers are a seeded draw of distinct rows. A cluster that
    loses all members is re-seeded to the point currently farthest from
    its own centroid. Stops on assignment convergence or after
    ``max_iter`` sweeps; returns (centers, assignments).
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= n_clusters <= n:
        raise ValueError(f"n_clusters must be in 1..{n}, got {n_clusters}")
    rng = np.random.default_rng(seed)
    centers = x[rng.choice(n, size=n_clusters, replace=False)].copy()
    assign = np.full(n, -1, dtype=np.intp)
    for _ in range(max_iter):
        d2 = sq_dists(x, centers)
        new_assign = d2.argmin(axis=1)
        counts = np.bincount(new_assign, minlength=n_clusters)
        moved: set[int] = set()
        while np.any(counts == 0):
            empty = int(np.flatnonzero(counts == 0)[0])
            own = d2[np.arange(n), new_assign].copy()
            if moved:
                own[list(moved)] = -1.0
            far = int(own.argmax())
            counts[new_assign[far]] -= 1
            new_assign[far] = empty
            counts[empty] += 1
            moved.add(far)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        centers = np.stack([x[assign == c].mean(axis=0) for c in range(n_clusters)])
    return centers, assign


def _cluster_widths(
    x: np.ndarray, centers: np.ndarray, assign: np.ndarray, wsf: float
) -> np.ndarray:
    """Per-centroid widths: wsf times the mean member distance.

    Clusters whose mean member distance is zero (singletons, duplicated
    points) fall back to the nearest other centroid's distance, then to
    1.0, keeping every width strictly positive.
    """
    k = centers.shape[0]
    member_dist = np.sqrt(((x - centers[assign]) ** 2).sum(axis=1))
    center_d2 = sq_dists(centers, centers)
    np.fill_diagonal(center_d2, np.inf)
    widths = np.empty(k)
    for c in range(k):
        members = member_dist[assign == c]
        local = float(members.mean()) if members.size else 0.0
        if local <= 0.0:
            local = float(np.sqrt(center_d2[c].min())) if k > 1 else 0.0
            if local <= 0.0 or not np.isfinite(local):
                local = 1.0
        widths[c] = wsf * local
    return widths


def solve_rbf_weights(
    x: np.ndarray, y: np.ndarray, centroids: np.ndarray, widths: np.ndarray
) -> tuple[np.ndarray, float]:
    """Least-squares output weights and bias for fixed centroids/widths."""
    design = np.hstack(
        [_kernel_from_sq(sq_dists(x, centroids), widths), np.ones((len(y), 1))]
    )
    solution = np.linalg.lstsq(design, y, rcond=None)[0]
    return solution[:-1], float(solution[-1])


def fit_rbfn(train: Dataset, n_centroids: int, wsf: float, seed: int = 0) -> RbfnModel:
    """Fit an RBF network; the centroid placement never reads the targets."""
    if wsf <= 0.0:
        raise ValueError(f"wsf must be positive, got {wsf}")
    centers, assign = kmeans(train.X, n_centroids, seed)
    widths = _cluster_widths(train.X, centers, assign, wsf)
    weights, bias = solve_rbf_weights(train.X, train.y, centers, widths)
    return RbfnModel(centers, widths, weights, bias, float(wsf))


def predict_rbfn(m: RbfnModel, x):
    points, single = _as_points(x, m.centroids.shape[1])
    design = _kernel_from_sq(sq_dists(points, m.centroids), m.widths)
    out = design @ m.weights + m.bias
    return float(out[0]) if single else out


def fit_lssvm(train: Dataset, sigma: float, gamma: float) -> LssvmModel:
    """Solve the LS-SVM dual system for the given kernel width and weight."""
    if sigma <= 0.0 or gamma <= 0.0:
        raise ValueError(
            f"sigma and gamma must be positive, got sigma={sigma}, gamma={gamma}"
        )
    x, y = train.X, train.y
    n = train.n_samples
    a = np.zeros((n + 1, n + 1))
    a[0, 1:] = 1.0
    a[1:, 0] = 1.0
    a[1:, 1:] = _kernel_from_sq(sq_dists(x, x), sigma)
    a[np.arange(1, n + 1), np.arange(1, n + 1)] += 1.0 / gamma
    rhs = np.concatenate([[0.0], y])
    try:
        solution = np.linalg.solve(a, rhs)
        # One refinement step tightens lambda_i = gamma * e_i to solver precision.
        solution += np.linalg.solve(a, rhs - a @ solution)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"LS-SVM dual system is singular for sigma={sigma}, gamma={gamma} "
            f"(condition estimate {np.linalg.cond(a):.3e})"
        ) from exc
    if not np.all(np.isfinite(solution)):
        raise NumericalError(
            f"LS-SVM solve produced non-finite values for sigma={sigma}, gamma={gamma}"
        )
    return LssvmModel(x, solution[1:], float(solution[0]), float(sigma), float(gamma))


def predict_lssvm(m: LssvmModel, x):
    points, single = _as_points(x, m.support_points.shape[1])
    kernel = _kernel_from_sq(sq_dists(points, m.support_points), m.sigma)
    out = kernel @ m.coefficients + m.bias
    return float(out[0]) if single else out


def fit_linear(train: Dataset) -> LinearModel:
    design = np.hstack([train.X, np.ones((train.n_samples, 1))])
    solution = np.linalg.lstsq(design, train.y, rcond=None)[0]
    return LinearModel(solution[:-1], float(solution[-1]))


def predict_linear(m: LinearModel, x):
    points, single = _as_points(x, m.coefficients.shape[0])
    out = points @ m.coefficients + m.intercept
    return float(out[0]) if single else out


def kkt_residual(m: LssvmModel, train: Dataset) -> float:
    """Max dual-optimality violation max_i |lambda_i - gamma (y_i - yhat_i)|."""
    residuals = train.y - predict_lssvm(m, train.X)
    return float(np.max(np.abs(m.coefficients - m.gamma * residuals)))


def model_to_dict(model) -> dict:
    if isinstance(model, RbfnModel):
        kind, data = "rbfn", {
            "centroids": model.centroids.tolist(),
            "widths": model.widths.tolist(),
            "weights": model.weights.tolist(),
            "bias": model.bias,
            "wsf": model.wsf,
        }
    elif isinstance(model, LssvmModel):
        kind, data = "lssvm", {
            "support_points": model.support_points.tolist(),
            "coefficients": model.coefficients.tolist(),
            "bias": model.bias,
            "sigma": model.sigma,
            "gamma": model.gamma,
        }
    elif isinstance(model, LinearModel):
        kind, data = "linear", {
            "coefficients": model.coefficients.tolist(),
            "intercept": model.intercept,
        }
    else:
        raise ValueError(f"cannot serialize {type(model).__name__}")
    return {"format": MODEL_FORMAT, "version": MODEL_FORMAT_VERSION, "kind": kind, "data": data}


def model_from_dict(doc: dict):
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"not a model document: format={doc.get('format')!r}")
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model document version {doc.get('version')!r}")
    kind = doc.get("kind")
    data = doc["data"]
    if kind == "rbfn":
        return RbfnModel(
            np.array(data["centroids"]),
            np.array(data["widths"]),
            np.array(data["weights"]),
            float(data["bias"]),
            float(data["wsf"]),
        )
    if kind == "lssvm":
        return LssvmModel(
            np.array(data["support_points"]),
            np.array(data["coefficients"]),
            float(data["bias"]),
            float(data["sigma"]),
            float(data["gamma"]),
        )
    if kind == "linear":
        return LinearModel(np.array(data["coefficients"]), float(data["intercept"]))
    raise ValueError(f"unknown model kind {kind!r}")


def save_model(model, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(model_to_dict(model), handle)
        handle.write("\n")


def load_model(path: str | Path):
    with open(path, "r", encoding="utf-8") as handle:
        return model_from_dict(json.load(handle))
