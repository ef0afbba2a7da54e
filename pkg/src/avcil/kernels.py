"""Dense numeric primitives shared by every other module.

All randomness in the package goes through :func:`make_rng`, which wraps
numpy's PCG64 bit generator seeded from a single 64-bit integer.  Given the
same seed, every draw is reproducible bit-for-bit across runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg


class NumericError(ValueError):
    """Invalid input to a numeric primitive (shape, finiteness, range)."""


class ZeroNormError(NumericError):
    """A vector with zero Euclidean norm was passed where a direction is needed."""


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator for a 64-bit seed."""
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Validate and return a finite 2-D float64 array."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise NumericError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{name} contains non-finite entries")
    return a


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    # two-branch form avoids overflow in exp for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis`` of an array of any rank."""
    x = np.asarray(x, dtype=np.float64)
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def stable_softmax(v) -> np.ndarray:
    """Softmax of a 1-D vector; max-shifted so large inputs do not overflow."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise NumericError("stable_softmax needs a non-empty 1-D vector")
    if not np.all(np.isfinite(v)):
        raise NumericError("stable_softmax input contains non-finite entries")
    return softmax(v)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    z = x - np.max(x, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise NumericError(f"length mismatch: {u.size} vs {v.size}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ZeroNormError("cosine similarity is undefined for a zero vector")
    c = float(np.dot(u, v) / (nu * nv))
    return min(1.0, max(-1.0, c))


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cosine similarities between ``a`` (n, d) and ``b`` (m, d).

    Zero rows produce a similarity of 0 with everything.
    """
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    na = np.where(na == 0.0, 1.0, na)
    nb = np.where(nb == 0.0, 1.0, nb)
    return np.clip((a / na) @ (b / nb).T, -1.0, 1.0)


def one_hot(labels, n_classes: int = 4) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise NumericError(f"labels outside [0, {n_classes})")
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


@dataclass(frozen=True)
class RidgeConfig:
    eta: float = 1.0

    def __post_init__(self):
        if not (self.eta > 0 and np.isfinite(self.eta)):
            raise NumericError(f"ridge eta must be a finite positive number, got {self.eta}")


def ridge_solve(F, Y, cfg: RidgeConfig = RidgeConfig()) -> np.ndarray:
    """Minimize ``||Y - F W||_F^2 + eta ||W||_F^2`` in closed form.

    Solves ``(F^T F + eta I) W = F^T Y`` with a Cholesky factorization; the
    system matrix is symmetric positive definite for any ``eta > 0``.
    """
    F = as_matrix(F, "F")
    Y = as_matrix(Y, "Y")
    if F.shape[0] != Y.shape[0]:
        raise NumericError(f"row mismatch: F has {F.shape[0]} rows, Y has {Y.shape[0]}")
    gram = F.T @ F
    gram[np.diag_indices_from(gram)] += cfg.eta
    rhs = F.T @ Y
    try:
        factor = scipy.linalg.cho_factor(gram, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - SPD by construction
        raise RuntimeError("Cholesky factorization failed on a regularized Gram matrix") from exc
    # C order, so a reloaded copy multiplies through the same BLAS path bit for bit
    return np.ascontiguousarray(scipy.linalg.cho_solve(factor, rhs, check_finite=False))


def ridge_objective(F: np.ndarray, Y: np.ndarray, W: np.ndarray, eta: float) -> float:
    r = Y - F @ W
    return float(np.sum(r * r) + eta * np.sum(W * W))


def ridge_residual(F: np.ndarray, Y: np.ndarray, W: np.ndarray, eta: float) -> float:
    """Max-abs normal-equation residual, relative to ``1 + max|F^T Y|``."""
    rhs = F.T @ Y
    lhs = F.T @ (F @ W) + eta * W
    return float(np.max(np.abs(lhs - rhs), initial=0.0) / (1.0 + np.max(np.abs(rhs), initial=0.0)))


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    iterations: int
    inertia_history: list[float] = field(default_factory=list)


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d = (
        np.sum(points * points, axis=1)[:, None]
        - 2.0 * points @ centroids.T
        + np.sum(centroids * centroids, axis=1)[None, :]
    )
    return np.maximum(d, 0.0)


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    closest = _sq_dists(points, points[chosen[0]][None, :])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0.0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # every remaining point coincides with a chosen centre
            free = np.setdiff1d(np.arange(n), chosen)
            idx = int(free[rng.integers(free.size)])
        chosen.append(idx)
        closest = np.minimum(closest, _sq_dists(points, points[idx][None, :])[:, 0])
    return points[chosen].copy()


def kmeans(points, k: int, max_iter: int = 100, seed: int = 0) -> KMeansResult:
    """Lloyd's k-means with k-means++ seeding.

    Empty clusters take the point farthest from its current centroid.  Stops
    when assignments no longer change or after ``max_iter`` iterations.
    ``inertia_history`` holds the inertia after each iteration's mean update
    and is non-increasing.
    """
    X = as_matrix(points, "points")
    n = X.shape[0]
    if k < 1:
        raise NumericError("k must be at least 1")
    if k > n:
        raise NumericError(f"k={k} exceeds the number of points n={n}")
    if max_iter < 1:
        raise NumericError("max_iter must be at least 1")

    rng = make_rng(seed)
    centroids = _kmeanspp_init(X, k, rng)
    assign = np.full(n, -1, dtype=np.int64)
    history: list[float] = []
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sq_dists(X, centroids)
        new_assign = np.argmin(d2, axis=1)
        counts = np.bincount(new_assign, minlength=k)
        for empty in np.flatnonzero(counts == 0):
            own = d2[np.arange(n), new_assign]
            # only steal from clusters that keep at least one member
            own = np.where(counts[new_assign] > 1, own, -1.0)
            far = int(np.argmax(own))
            counts[new_assign[far]] -= 1
            new_assign[far] = empty
            counts[empty] = 1
        changed = not np.array_equal(new_assign, assign)
        assign = new_assign
        for j in range(k):
            centroids[j] = X[assign == j].mean(axis=0)
        diff = X - centroids[assign]
        history.append(float(np.sum(diff * diff)))
        if not changed:
            break
    return KMeansResult(centroids, assign, history[-1], it, history)
