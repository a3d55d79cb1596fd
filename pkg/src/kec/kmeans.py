"""Spherical (and plain) k-means with restarts.

Used for the initial over-clustering of image features and again as the
training-free downstream clusterer on concatenated features. Centroids are
L2-renormalized after every update in spherical mode; the best of ``n_redo``
restarts (minimal objective) is kept.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, InvariantError
from .tensorio import EmbeddingMatrix


@dataclass
class KMeansConfig:
    k: int
    n_redo: int = 20
    n_iter: int = 300
    spherical: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise InvariantError("k must be >= 1")
        if self.n_redo < 1:
            raise InvariantError("n_redo must be >= 1")
        if self.n_iter < 1:
            raise InvariantError("n_iter must be >= 1")


@dataclass
class KMeansResult:
    centroids: EmbeddingMatrix
    assignments: np.ndarray
    objective: float
    iterations_run: int
    # objective after every assignment step of the winning restart
    objective_history: list = field(default_factory=list)


def _point_costs(x, centroids, spherical):
    if spherical:
        return 1.0 - x @ centroids.T
    diff = np.sum(x * x, axis=1)[:, None] - 2.0 * (x @ centroids.T)
    return diff + np.sum(centroids * centroids, axis=1)[None, :]


def _plusplus_init(x, k, rng):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = x[first]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(d2), r))
            idx = min(idx, n - 1)
        centers[j] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))
    return centers


def _normalize_centroids(centers):
    norms = np.linalg.norm(centers, axis=1)
    nz = norms > 0.0
    centers[nz] /= norms[nz, None]
    return centers


def _run_once(x, k, n_iter, spherical, rng):
    n = x.shape[0]
    centers = _plusplus_init(x, k, rng)
    if spherical:
        _normalize_centroids(centers)
    assignments = np.full(n, -1, dtype=np.int64)
    history = []
    iterations = 0
    for _ in range(n_iter):
        iterations += 1
        costs = _point_costs(x, centers, spherical)
        new_assign = np.argmin(costs, axis=1)
        point_cost = costs[np.arange(n), new_assign]
        history.append(float(point_cost.sum()))
        if np.array_equal(new_assign, assignments):
            assignments = new_assign
            break
        assignments = new_assign
        for j in range(k):
            members = assignments == j
            if members.any():
                centers[j] = x[members].mean(axis=0)
            else:
                # reseed dead centroid to the currently worst-served point
                worst = int(np.argmax(point_cost))
                centers[j] = x[worst]
                point_cost[worst] = 0.0
        if spherical:
            _normalize_centroids(centers)
    costs = _point_costs(x, centers, spherical)
    assignments = np.argmin(costs, axis=1)
    objective = float(costs[np.arange(n), assignments].sum())
    history.append(objective)
    return centers, assignments, objective, iterations, history


def fit(data, config):
    """Best-of-n_redo Lloyd iterations; deterministic for a fixed seed."""
    x = np.asarray(data.values, dtype=np.float64)
    if config.k > x.shape[0]:
        raise InvariantError(f"k={config.k} exceeds {x.shape[0]} data rows")
    if config.spherical and not data.normalized:
        raise InvariantError("spherical k-means requires row-normalized data")
    rng = np.random.Generator(np.random.PCG64(config.seed))
    best = None
    for _ in range(config.n_redo):
        result = _run_once(x, config.k, config.n_iter, config.spherical, rng)
        if best is None or result[2] < best[2]:
            best = result
    centers, assignments, objective, iterations, history = best
    centroids = EmbeddingMatrix(
        centers.astype(np.float32), normalized=config.spherical
    )
    return KMeansResult(centroids, assignments, max(objective, 0.0), iterations, history)


def assign(centroids, data):
    """Map each point to its nearest centroid; ties go to the lowest index."""
    if centroids.dim != data.dim:
        raise DimensionMismatchError(
            f"centroid dim {centroids.dim} != data dim {data.dim}"
        )
    x = np.asarray(data.values, dtype=np.float64)
    c = np.asarray(centroids.values, dtype=np.float64)
    costs = _point_costs(x, c, centroids.normalized)
    return np.argmin(costs, axis=1)
