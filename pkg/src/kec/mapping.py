"""Initial image-text mapping: over-cluster images, attach top nouns.

The image set is intentionally over-segmented (k = N_v / ratio, floored at 2)
so fine-grained distinctions survive until concept merging. Each cluster
centroid picks its top-k most similar nouns; the textual centroid is the
renormalized mean of the selected noun embeddings.
"""

from dataclasses import dataclass

import numpy as np

from . import kmeans
from .errors import DimensionMismatchError, InvariantError
from .tensorio import EmbeddingMatrix


@dataclass
class MappingResult:
    k: int
    centroids: EmbeddingMatrix  # k x d visual centroids
    image_assignments: np.ndarray
    noun_indices: list  # per cluster: list of top_k noun indices, score-desc
    noun_sets: list  # per cluster: the noun strings, index-aligned
    text_centroids: EmbeddingMatrix  # k x d renormalized means of selected nouns


def cluster_count(n_images, ratio):
    """k = max(2, round(n/ratio)), never exceeding n."""
    k = max(2, int(np.floor(n_images / ratio + 0.5)))
    return min(k, n_images)


def top_k_nouns(centroid, noun_values, top_k):
    """Indices of the top_k largest dot products, ties toward lowest index."""
    scores = noun_values @ centroid
    order = np.lexsort((np.arange(scores.size), -scores))
    return order[:top_k].tolist()


def build_mapping(images, nouns, noun_embs, ratio=300, top_k=5, seed=0):
    if images.dim != noun_embs.dim:
        raise DimensionMismatchError(
            f"image dim {images.dim} != noun dim {noun_embs.dim}"
        )
    if not images.normalized or not noun_embs.normalized:
        raise InvariantError("mapping requires normalized image and noun embeddings")
    if images.rows < 2:
        raise InvariantError("need at least 2 images")
    if len(nouns) != noun_embs.rows:
        raise InvariantError("noun vocabulary and embedding rows differ")
    if len(nouns) < top_k:
        raise InvariantError(f"need at least top_k={top_k} nouns, got {len(nouns)}")

    k = cluster_count(images.rows, ratio)
    result = kmeans.fit(images, kmeans.KMeansConfig(k=k, seed=seed))

    noun_values = np.asarray(noun_embs.values, dtype=np.float64)
    noun_indices = []
    noun_sets = []
    text_centroids = np.empty((k, images.dim), dtype=np.float64)
    for p in range(k):
        sel = top_k_nouns(
            np.asarray(result.centroids.values[p], dtype=np.float64),
            noun_values,
            top_k,
        )
        noun_indices.append(sel)
        noun_sets.append([nouns.nouns[j] for j in sel])
        mean = noun_values[sel].mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm == 0.0:
            raise InvariantError(f"text centroid for cluster {p} is zero")
        text_centroids[p] = mean / norm

    return MappingResult(
        k=k,
        centroids=result.centroids,
        image_assignments=result.assignments,
        noun_indices=noun_indices,
        noun_sets=noun_sets,
        text_centroids=EmbeddingMatrix(
            text_centroids.astype(np.float32), normalized=True
        ),
    )
