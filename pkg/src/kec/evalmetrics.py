"""Clustering evaluation: NMI, ACC via optimal assignment, ARI.

NMI uses arithmetic-mean entropy normalization. ACC solves the optimal
cluster-to-class matching on a zero-padded square cost matrix. A zero-shot
assignment baseline (nearest class-prompt embedding) is included.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DimensionMismatchError, InvariantError
from .tensorio import LabelVector


@dataclass
class ContingencyTable:
    counts: np.ndarray  # r x c non-negative ints
    n: int


@dataclass
class EvalReport:
    nmi: float
    acc: float
    ari: float

    def as_dict(self, precise=False):
        if precise:
            return {"nmi": self.nmi, "acc": self.acc, "ari": self.ari}
        return {
            "nmi": round(self.nmi, 4),
            "acc": round(self.acc, 4),
            "ari": round(self.ari, 4),
        }


def contingency(pred, truth):
    p = np.asarray(pred.labels if isinstance(pred, LabelVector) else pred)
    t = np.asarray(truth.labels if isinstance(truth, LabelVector) else truth)
    if p.shape != t.shape:
        raise InvariantError(
            f"length mismatch: pred {p.shape[0]} vs truth {t.shape[0]}"
        )
    if p.size == 0:
        raise InvariantError("empty label vectors")
    r = int(p.max()) + 1
    c = int(t.max()) + 1
    counts = np.zeros((r, c), dtype=np.int64)
    np.add.at(counts, (p, t), 1)
    return ContingencyTable(counts=counts, n=int(p.size))


def _entropy(marginal, n):
    probs = marginal[marginal > 0] / n
    return float(-(probs * np.log(probs)).sum())


def nmi(table):
    """Mutual information over the arithmetic mean of the entropies.

    Degenerate partitions: both single-cluster -> 1.0 (identical);
    exactly one single-cluster -> 0.0.
    """
    counts = table.counts
    n = table.n
    row = counts.sum(axis=1)
    col = counts.sum(axis=0)
    h_pred = _entropy(row, n)
    h_truth = _entropy(col, n)
    if h_pred == 0.0 and h_truth == 0.0:
        return 1.0
    if h_pred == 0.0 or h_truth == 0.0:
        return 0.0
    nz = counts > 0
    joint = counts[nz] / n
    outer = np.outer(row, col)[nz] / (n * n)
    mi = float((joint * np.log(joint / outer)).sum())
    value = mi / (0.5 * (h_pred + h_truth))
    return float(min(max(value, 0.0), 1.0))


def ari(table):
    """Pair-counting adjusted Rand index; expected 0 under permutation."""
    if table.n < 2:
        raise InvariantError("ARI requires at least 2 points")
    counts = table.counts.astype(np.float64)
    n = table.n
    sum_comb = (counts * (counts - 1) / 2).sum()
    row = counts.sum(axis=1)
    col = counts.sum(axis=0)
    comb_row = (row * (row - 1) / 2).sum()
    comb_col = (col * (col - 1) / 2).sum()
    total = n * (n - 1) / 2
    expected = comb_row * comb_col / total
    max_index = 0.5 * (comb_row + comb_col)
    if max_index == expected:
        # both partitions trivial in the same way
        return 1.0
    return float((sum_comb - expected) / (max_index - expected))


def acc_hungarian(table):
    """Best injective cluster->class matching accuracy via assignment."""
    counts = table.counts
    size = max(counts.shape)
    padded = np.zeros((size, size), dtype=np.int64)
    padded[: counts.shape[0], : counts.shape[1]] = counts
    rows, cols = linear_sum_assignment(padded, maximize=True)
    return float(padded[rows, cols].sum()) / table.n


def evaluate(pred, truth):
    table = contingency(pred, truth)
    return EvalReport(
        nmi=nmi(table), acc=acc_hungarian(table), ari=ari(table)
    )


def zero_shot_assign(images, class_text_embs):
    """Nearest class-prompt embedding; ties go to the lowest class index."""
    if images.dim != class_text_embs.dim:
        raise DimensionMismatchError(
            f"image dim {images.dim} != class dim {class_text_embs.dim}"
        )
    if not class_text_embs.normalized:
        raise InvariantError("class embeddings must be normalized")
    scores = np.asarray(images.values, dtype=np.float64) @ np.asarray(
        class_text_embs.values, dtype=np.float64
    ).T
    labels = np.argmax(scores, axis=1).astype(np.int64)
    return LabelVector(labels, num_classes=class_text_embs.rows)
