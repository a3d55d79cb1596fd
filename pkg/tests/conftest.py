import numpy as np
import pytest

from kec.tensorio import EmbeddingMatrix


def random_unit_matrix(rng, rows, dim):
    values = rng.standard_normal((rows, dim))
    values /= np.linalg.norm(values, axis=1, keepdims=True)
    return EmbeddingMatrix(values.astype(np.float32), normalized=True)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
