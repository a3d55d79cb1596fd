"""Per-image knowledge grounding.

Concepts get a unified representation (name + description embeddings),
images attend over concepts via a softmax of dot products, attributes are
instantiated per image with a Hadamard product and averaged within each
concept, and the weighted sums form the knowledge-enhanced feature that is
concatenated with the original visual feature.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, InvariantError
from .tensorio import EmbeddingMatrix


@dataclass
class GroundedFeatures:
    omega: np.ndarray  # N x M attention weights, rows sum to 1
    concept_feat: np.ndarray  # N x d
    attr_feat: np.ndarray  # N x d
    kappa: np.ndarray  # N x d
    concat: np.ndarray  # N x 2d, left half bitwise equal to the input
    zeta: np.ndarray  # M x d unified concept representations


def concept_reprs(kb, use_name=True, use_desc=True):
    """Unit-norm zeta per concept: name + description embeddings summed."""
    if not use_name and not use_desc:
        raise InvariantError("at least one of use_name/use_desc must be set")
    rows = []
    for concept in kb.concepts:
        if use_name and use_desc:
            vec = np.asarray(concept.name_emb, dtype=np.float64) + np.asarray(
                concept.desc_emb, dtype=np.float64
            )
        elif use_name:
            vec = np.asarray(concept.name_emb, dtype=np.float64)
        else:
            vec = np.asarray(concept.desc_emb, dtype=np.float64)
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            raise InvariantError(
                f"concept {concept.id} has a zero unified representation"
            )
        rows.append(vec / norm)
    return np.stack(rows)


def attention_weights(images, zeta, tau=1.0):
    """Row-stochastic softmax over concepts of (x . zeta) / tau."""
    if tau <= 0:
        raise InvariantError(f"tau must be positive, got {tau}")
    x = np.asarray(images.values, dtype=np.float64)
    if x.shape[1] != zeta.shape[1]:
        raise DimensionMismatchError(
            f"image dim {x.shape[1]} != concept dim {zeta.shape[1]}"
        )
    logits = (x @ zeta.T) / tau
    logits -= logits.max(axis=1, keepdims=True)
    weights = np.exp(logits)
    weights /= weights.sum(axis=1, keepdims=True)
    return weights


def instantiate_attributes(images, kb):
    """Mean Hadamard-instantiated attribute vector per (image, concept).

    Concepts with no attributes contribute a zero vector, keeping the
    attention index set equal to all concepts.
    """
    x = np.asarray(images.values, dtype=np.float64)
    n, d = x.shape
    m = kb.num_concepts
    mean_attr = np.zeros((n, m, d))
    for qi, concept in enumerate(kb.concepts):
        records = kb.attributes_for(concept.id)
        if not records:
            continue
        xi = np.stack(
            [np.asarray(r.embedding, dtype=np.float64) for r in records]
        )
        if xi.shape[1] != d:
            raise DimensionMismatchError(
                f"attribute dim {xi.shape[1]} != image dim {d}"
            )
        # x_i (Hadamard) xi, averaged over the concept's attribute set
        mean_attr[:, qi, :] = x * xi.mean(axis=0)[None, :]
    return mean_attr


def ground(images, kb, use_name=True, use_desc=True, use_attributes=True,
           tau=1.0, renormalize_kappa=True):
    """Full grounding: attention, weighted concept and attribute features."""
    zeta = concept_reprs(kb, use_name=use_name, use_desc=use_desc)
    omega = attention_weights(images, zeta, tau=tau)
    x = np.asarray(images.values, dtype=np.float64)
    concept_feat = omega @ zeta
    if use_attributes:
        mean_attr = instantiate_attributes(images, kb)
        attr_feat = np.einsum("nm,nmd->nd", omega, mean_attr)
    else:
        attr_feat = np.zeros_like(concept_feat)
    kappa = concept_feat + attr_feat
    if renormalize_kappa:
        norms = np.linalg.norm(kappa, axis=1, keepdims=True)
        zero = norms[:, 0] == 0.0
        if zero.any():
            raise InvariantError(
                f"kappa is zero for image {int(np.flatnonzero(zero)[0])}"
            )
        kappa = kappa / norms
    concat = np.concatenate(
        [images.values, kappa.astype(np.float32)], axis=1
    )
    return GroundedFeatures(
        omega=omega,
        concept_feat=concept_feat,
        attr_feat=attr_feat,
        kappa=kappa,
        concat=concat,
        zeta=zeta,
    )


def concat_features(images, grounded):
    """[x_i ; kappa_i] with the left block bitwise equal to the input."""
    kappa = grounded.kappa.astype(np.float32)
    if kappa.shape[0] != images.rows:
        raise DimensionMismatchError("row count mismatch between x and kappa")
    return EmbeddingMatrix(
        np.concatenate([images.values, kappa], axis=1), normalized=False
    )
