"""Independent reference implementations used to cross-check the package.

Everything here is written as plainly as possible (per-sample loops,
no shared code with the package beyond numpy) so that agreement with
the production code is meaningful. The distance accumulation follows
the same canonical convention as production, ascending variable order
with one addition per variable, which is what makes bit-level
comparisons on eps and the neighbor counts legitimate.
"""

from __future__ import annotations

import math

import numpy as np


def naive_neighborhood(x: np.ndarray, y: np.ndarray, i: int, k: int):
    """(eps, n_x, n_y) for sample i by exhaustive pairwise comparison."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=np.float64)
    n = len(y)

    dx2 = np.zeros(n)
    for j in range(x.shape[1]):
        dx2 += (x[:, j] - x[i, j]) ** 2
    dy2 = (y - y[i]) ** 2

    dz2 = []
    for m in range(n):
        if m != i:
            dz2.append(max(dx2[m], dy2[m]))
    eps2 = sorted(dz2)[k - 1]

    n_x = sum(1 for m in range(n) if m != i and dx2[m] < eps2)
    n_y = sum(1 for m in range(n) if m != i and dy2[m] < eps2)
    return math.sqrt(eps2), n_x, n_y


def naive_mi(x: np.ndarray, y: np.ndarray, k: int, psi=None) -> float:
    """Direct transcription of the k-NN MI estimator from its formula.

    ``psi`` defaults to mpmath's digamma so the oracle does not depend
    on the package's own special-function code.
    """
    if psi is None:
        import mpmath

        psi = lambda t: float(mpmath.digamma(t))  # noqa: E731
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    total = 0.0
    for i in range(n):
        _, n_x, n_y = naive_neighborhood(x, y, i, k)
        total += psi(n_x + 1) + psi(n_y + 1)
    return psi(k) - total / n + psi(n)


def gaussian_mi(rho: float) -> float:
    """Exact MI of a bivariate Gaussian with correlation rho, in nats."""
    return -0.5 * math.log(1.0 - rho * rho)


def best_subset_by_enumeration(session, candidates, max_size=None):
    """Highest-MI subset by brute force over all non-empty combinations.

    Ties resolve to the smaller subset, then to the lexicographically
    smaller sorted index tuple, mirroring the documented contract.
    """
    import itertools

    candidates = sorted(candidates)
    sizes = range(1, (max_size or len(candidates)) + 1)
    best = None
    for size in sizes:
        for combo in itertools.combinations(candidates, size):
            value = session.mi(combo)
            key = (-value, len(combo), combo)
            if best is None or key < best[0]:
                best = (key, combo, value)
    return best[1], best[2]
