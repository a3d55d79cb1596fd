"""Text-to-vector providers used to embed concept and attribute strings.

Live runs resolve strings through a sidecar produced by the exporter (a
newline-delimited strings file plus an index-aligned embedding matrix).
Tests and mock runs use a deterministic hash-projection embedder so no
model inference happens inside this package.
"""

import hashlib

import numpy as np

from .errors import InvariantError, MissingEmbeddingError
from .tensorio import read_embeddings, read_nouns


class HashEmbedder:
    """Deterministic unit vector per string via a hash-seeded projection."""

    def __init__(self, dim):
        if dim < 1:
            raise InvariantError("embedding dim must be >= 1")
        self.dim = dim

    def embed(self, text):
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        seed = int.from_bytes(digest[:8], "little")
        rng = np.random.Generator(np.random.PCG64(seed))
        vec = rng.standard_normal(self.dim)
        vec /= np.linalg.norm(vec)
        return vec.astype(np.float32)


class SidecarEmbedder:
    """Exact-match lookup into an exporter-produced string/vector pair."""

    def __init__(self, strings_path, matrix_path):
        vocab = read_nouns(strings_path)
        matrix = read_embeddings(matrix_path)
        if len(vocab) != matrix.rows:
            raise InvariantError(
                f"sidecar mismatch: {len(vocab)} strings vs {matrix.rows} rows"
            )
        self.dim = matrix.dim
        self._table = {}
        values = matrix.values
        norms = np.linalg.norm(values.astype(np.float64), axis=1)
        for i, text in enumerate(vocab.nouns):
            row = values[i]
            if norms[i] > 0 and abs(norms[i] - 1.0) > 1e-4:
                row = (row / norms[i]).astype(np.float32)
            self._table[text] = row

    def embed(self, text):
        try:
            return self._table[text]
        except KeyError:
            raise MissingEmbeddingError(text) from None


class MappingEmbedder:
    """In-memory string -> vector table, mainly for tests and fixtures."""

    def __init__(self, table, dim):
        self._table = dict(table)
        self.dim = dim

    def embed(self, text):
        try:
            return np.asarray(self._table[text], dtype=np.float32)
        except KeyError:
            raise MissingEmbeddingError(text) from None
