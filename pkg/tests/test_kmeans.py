import numpy as np
import pytest

from kec import kmeans
from kec.errors import DimensionMismatchError, InvariantError
from kec.evalmetrics import contingency, ari
from kec.tensorio import EmbeddingMatrix

from conftest import random_unit_matrix


def two_blobs(rng, per_blob=20, dim=8):
    """Two well-separated blobs on the unit sphere."""
    centers = np.zeros((2, dim))
    centers[0, 0] = 1.0
    centers[1, 1] = 1.0
    points = []
    labels = []
    for b in range(2):
        pts = centers[b] + 0.05 * rng.standard_normal((per_blob, dim))
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        points.append(pts)
        labels.extend([b] * per_blob)
    data = EmbeddingMatrix(
        np.concatenate(points).astype(np.float32), normalized=True
    )
    return data, np.array(labels)


def test_exact_cover_zero_objective(rng):
    data = random_unit_matrix(rng, 5, 6)
    result = kmeans.fit(data, kmeans.KMeansConfig(k=5, n_redo=5, seed=1))
    assert result.objective < 1e-9
    assert sorted(result.assignments.tolist()) == [0, 1, 2, 3, 4]


def test_identical_points_single_cluster():
    row = np.array([0.6, 0.8, 0.0], dtype=np.float32)
    data = EmbeddingMatrix(np.tile(row, (7, 1)), normalized=True)
    result = kmeans.fit(data, kmeans.KMeansConfig(k=1, seed=3))
    assert np.allclose(result.centroids.values[0], row, atol=1e-6)
    assert result.objective < 1e-9


def test_two_blobs_recovered(rng):
    data, truth = two_blobs(rng)
    result = kmeans.fit(data, kmeans.KMeansConfig(k=2, seed=7))
    table = contingency(result.assignments, truth)
    assert ari(table) == pytest.approx(1.0)


def test_k_exceeds_rows_rejected(rng):
    data = random_unit_matrix(rng, 3, 4)
    with pytest.raises(InvariantError):
        kmeans.fit(data, kmeans.KMeansConfig(k=4, seed=0))


def test_unnormalized_spherical_rejected():
    data = EmbeddingMatrix(np.ones((4, 3), dtype=np.float32))
    with pytest.raises(InvariantError):
        kmeans.fit(data, kmeans.KMeansConfig(k=2, seed=0))


def test_assign_exact_centroid_match(rng):
    centroids = random_unit_matrix(rng, 4, 5)
    point = EmbeddingMatrix(centroids.values[2:3].copy(), normalized=True)
    assert kmeans.assign(centroids, point).tolist() == [2]


def test_assign_tie_breaks_low_index():
    centroids = EmbeddingMatrix(
        np.array([[1, 0], [0, 1]], dtype=np.float32), normalized=True
    )
    point = np.array([[1, 1]], dtype=np.float32) / np.sqrt(2, dtype=np.float32)
    data = EmbeddingMatrix(point, normalized=True)
    assert kmeans.assign(centroids, data).tolist() == [0]


def test_assign_matches_brute_force(rng):
    centroids = random_unit_matrix(rng, 3, 6)
    data = random_unit_matrix(rng, 50, 6)
    got = kmeans.assign(centroids, data)
    # independent O(N k) scan
    for i in range(50):
        best, best_score = 0, -np.inf
        for j in range(3):
            score = float(
                np.dot(
                    data.values[i].astype(np.float64),
                    centroids.values[j].astype(np.float64),
                )
            )
            if score > best_score:
                best, best_score = j, score
        assert got[i] == best


def test_assign_dim_mismatch(rng):
    with pytest.raises(DimensionMismatchError):
        kmeans.assign(
            random_unit_matrix(rng, 2, 3), random_unit_matrix(rng, 2, 4)
        )


def test_objective_monotone_and_unit_centroids(rng):
    for trial in range(20):
        n = int(rng.integers(10, 60))
        d = int(rng.integers(2, 10))
        k = int(rng.integers(1, min(6, n)))
        data = random_unit_matrix(rng, n, d)
        result = kmeans.fit(
            data, kmeans.KMeansConfig(k=k, n_redo=3, seed=trial)
        )
        hist = result.objective_history
        for a, b in zip(hist, hist[1:]):
            assert b <= a + 1e-9
        norms = np.linalg.norm(
            result.centroids.values.astype(np.float64), axis=1
        )
        assert np.all(np.abs(norms - 1.0) < 1e-6)
        assert np.all(result.assignments >= 0)
        assert np.all(result.assignments < k)


def test_seed_determinism_bitwise(rng):
    data = random_unit_matrix(rng, 40, 6)
    config = kmeans.KMeansConfig(k=4, n_redo=5, seed=99)
    r1 = kmeans.fit(data, config)
    r2 = kmeans.fit(data, config)
    assert r1.centroids == r2.centroids
    assert np.array_equal(r1.assignments, r2.assignments)
    assert r1.objective == r2.objective


def test_euclidean_mode(rng):
    values = rng.standard_normal((30, 4)).astype(np.float32)
    data = EmbeddingMatrix(values, normalized=False)
    result = kmeans.fit(
        data, kmeans.KMeansConfig(k=3, spherical=False, n_redo=3, seed=5)
    )
    assert result.objective >= 0
    hist = result.objective_history
    for a, b in zip(hist, hist[1:]):
        assert b <= a + 1e-9
