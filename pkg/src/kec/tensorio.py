"""Binary embedding matrices plus label and noun text files.

File layout: magic ``KECEMB1\\0`` | rows u32 LE | dim u32 LE | flags u32 LE
(bit 0 = rows are unit-normalized) | rows*dim float32 LE, row-major.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagicError,
    HeaderOverflowError,
    InvariantError,
    NonFiniteValueError,
    TruncatedPayloadError,
)

MAGIC = b"KECEMB1\0"
_HEADER = struct.Struct("<III")
FLAG_NORMALIZED = 0x1

# u32 header fields; also guards rows*dim*4 against absurd allocations
_MAX_U32 = 2**32 - 1
_MAX_ELEMENTS = 2**31


@dataclass
class EmbeddingMatrix:
    """Dense rows x dim float32 matrix, optionally row-normalized."""

    values: np.ndarray  # (rows, dim) float32, C-contiguous
    normalized: bool = False

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise InvariantError("embedding matrix must be 2-dimensional")

    @property
    def rows(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[1]

    def validate(self):
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteValueError("matrix contains NaN or Inf values")
        if self.normalized and self.rows:
            norms = np.linalg.norm(self.values.astype(np.float64), axis=1)
            worst = np.abs(norms - 1.0).max()
            if worst > 1e-4:
                raise InvariantError(
                    f"normalized flag set but a row norm deviates by {worst:.2e}"
                )
        return self

    def __eq__(self, other):
        if not isinstance(other, EmbeddingMatrix):
            return NotImplemented
        return (
            self.normalized == other.normalized
            and self.values.shape == other.values.shape
            and np.array_equal(
                self.values.view(np.uint32), other.values.view(np.uint32)
            )
        )


@dataclass
class LabelVector:
    labels: np.ndarray  # (n,) int64
    num_classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.num_classes < 1:
            raise InvariantError("num_classes must be >= 1")
        if self.labels.size and (
            self.labels.min() < 0 or self.labels.max() >= self.num_classes
        ):
            raise InvariantError("labels out of range [0, num_classes)")


@dataclass
class NounVocabulary:
    nouns: list = field(default_factory=list)

    def __post_init__(self):
        if any(not n for n in self.nouns):
            raise InvariantError("noun vocabulary contains an empty string")

    def __len__(self):
        return len(self.nouns)


def read_embeddings(path):
    """Read an embedding file; raises a distinct error per malformation."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{path}: bad magic header")
    header_end = len(MAGIC) + _HEADER.size
    if len(data) < header_end:
        raise TruncatedPayloadError(f"{path}: truncated header")
    rows, dim, flags = _HEADER.unpack(data[len(MAGIC) : header_end])
    n_elems = rows * dim
    if n_elems > _MAX_ELEMENTS:
        raise HeaderOverflowError(f"{path}: rows*dim = {n_elems} exceeds limit")
    expected = n_elems * 4
    payload = data[header_end:]
    if len(payload) != expected:
        raise TruncatedPayloadError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(rows, dim).copy()
    if not np.all(np.isfinite(values)):
        raise NonFiniteValueError(f"{path}: payload contains NaN or Inf")
    return EmbeddingMatrix(values, normalized=bool(flags & FLAG_NORMALIZED)).validate()


def write_embeddings(matrix, path):
    """Write a matrix; output bytes are deterministic for equal inputs."""
    matrix.validate()
    if matrix.rows > _MAX_U32 or matrix.dim > _MAX_U32:
        raise HeaderOverflowError("rows or dim exceed u32 range")
    flags = FLAG_NORMALIZED if matrix.normalized else 0
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(matrix.rows, matrix.dim, flags))
        fh.write(
            np.ascontiguousarray(matrix.values, dtype="<f4").tobytes()
        )


def l2_normalize_rows(matrix):
    """Return a unit-row copy; refuses zero rows (always an upstream bug)."""
    values = np.asarray(matrix.values, dtype=np.float64)
    norms = np.linalg.norm(values, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise InvariantError(f"cannot normalize all-zero row {zero[0]}")
    out = (values / norms[:, None]).astype(np.float32)
    return EmbeddingMatrix(out, normalized=True)


def read_labels(path):
    """Newline-delimited decimal integers -> LabelVector."""
    with open(path, "r", encoding="utf-8") as fh:
        labels = [int(line) for line in fh if line.strip()]
    arr = np.asarray(labels, dtype=np.int64)
    num_classes = int(arr.max()) + 1 if arr.size else 1
    return LabelVector(arr, num_classes)


def write_labels(labels, path):
    with open(path, "w", encoding="utf-8") as fh:
        for v in np.asarray(labels).ravel():
            fh.write(f"{int(v)}\n")


def read_nouns(path):
    """Newline-delimited UTF-8 strings -> NounVocabulary."""
    with open(path, "r", encoding="utf-8") as fh:
        nouns = [line.rstrip("\n") for line in fh]
    while nouns and nouns[-1] == "":
        nouns.pop()
    return NounVocabulary(nouns)


def write_nouns(vocab, path):
    with open(path, "w", encoding="utf-8") as fh:
        for noun in vocab.nouns:
            fh.write(noun + "\n")
