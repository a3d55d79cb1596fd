import math

import numpy as np
import pytest

from kec import grounding
from kec.errors import DimensionMismatchError, InvariantError
from kec.knowledge import AttributeRecord, Concept, KnowledgeBase
from kec.tensorio import EmbeddingMatrix

from conftest import random_unit_matrix


def unit(vec):
    vec = np.asarray(vec, dtype=np.float64)
    return vec / np.linalg.norm(vec)


def make_kb(name_embs, desc_embs=None, attributes=None):
    if desc_embs is None:
        desc_embs = name_embs
    concepts = [
        Concept(
            id=i, member_clusters=[i], merged_nouns=[f"n{i}"],
            name=f"concept {i}", description=f"desc {i}",
            name_emb=np.asarray(name_embs[i], dtype=np.float32),
            desc_emb=np.asarray(desc_embs[i], dtype=np.float32),
        )
        for i in range(len(name_embs))
    ]
    return KnowledgeBase(
        concepts=concepts, attributes=list(attributes or []), neighbor_pairs=[]
    )


def random_kb(rng, m, d, attrs_per_concept=2, with_bi=True):
    name = rng.standard_normal((m, d))
    desc = rng.standard_normal((m, d))
    name /= np.linalg.norm(name, axis=1, keepdims=True)
    desc /= np.linalg.norm(desc, axis=1, keepdims=True)
    attributes = []
    for q in range(m):
        for a in range(attrs_per_concept):
            attributes.append(
                AttributeRecord(
                    text=f"attr {q}-{a}", kind="uni", owner_concepts=(q,),
                    embedding=unit(rng.standard_normal(d)).astype(np.float32),
                )
            )
    if with_bi and m >= 2:
        attributes.append(
            AttributeRecord(
                text="pair attr", kind="bi", owner_concepts=(0, 1),
                embedding=unit(rng.standard_normal(d)).astype(np.float32),
            )
        )
    return make_kb(name, desc, attributes)


# ---------------------------------------------------------------- zeta


def test_zeta_collinear_name_desc():
    e0 = np.eye(3)[0]
    kb = make_kb([e0], [e0])
    zeta = grounding.concept_reprs(kb)
    assert np.allclose(zeta, [e0], atol=1e-12)


def test_zeta_orthogonal_name_desc():
    e0, e1 = np.eye(3)[0], np.eye(3)[1]
    kb = make_kb([e0], [e1])
    zeta = grounding.concept_reprs(kb)
    expected = (e0 + e1) / math.sqrt(2.0)
    assert np.allclose(zeta[0], expected, atol=1e-7)


def test_zeta_ablations():
    e0, e1 = np.eye(3)[0], np.eye(3)[1]
    kb = make_kb([e0], [e1])
    assert np.allclose(
        grounding.concept_reprs(kb, use_desc=False), [e0], atol=1e-7
    )
    assert np.allclose(
        grounding.concept_reprs(kb, use_name=False), [e1], atol=1e-7
    )
    with pytest.raises(InvariantError):
        grounding.concept_reprs(kb, use_name=False, use_desc=False)


def test_zeta_rejects_cancellation():
    e0 = np.eye(3)[0]
    kb = make_kb([e0], [-e0])
    with pytest.raises(InvariantError):
        grounding.concept_reprs(kb)


def test_zeta_rows_unit(rng):
    kb = random_kb(rng, 4, 8)
    zeta = grounding.concept_reprs(kb)
    assert np.allclose(np.linalg.norm(zeta, axis=1), 1.0, atol=1e-9)


# -------------------------------------------------------------- attention


def test_attention_single_concept_is_one(rng):
    kb = random_kb(rng, 1, 5, with_bi=False)
    images = random_unit_matrix(rng, 6, 5)
    zeta = grounding.concept_reprs(kb)
    omega = grounding.attention_weights(images, zeta)
    assert np.allclose(omega, 1.0, atol=1e-12)


def test_attention_orthogonal_image_uniform():
    zeta = np.eye(4)[:2]  # concepts along e0, e1
    images = EmbeddingMatrix(
        np.array([[0.0, 0.0, 1.0, 0.0]], dtype=np.float32), normalized=True
    )
    omega = grounding.attention_weights(images, zeta)
    assert np.allclose(omega, [[0.5, 0.5]], atol=1e-12)


def test_attention_two_concept_logistic_oracle():
    zeta = np.eye(2)
    images = EmbeddingMatrix(
        np.array([[1.0, 0.0]], dtype=np.float32), normalized=True
    )
    omega = grounding.attention_weights(images, zeta, tau=1.0)
    # softmax([1, 0]) computed by hand
    e = math.exp(1.0)
    assert omega[0, 0] == pytest.approx(e / (e + 1.0), abs=1e-9)
    assert omega[0, 1] == pytest.approx(1.0 / (e + 1.0), abs=1e-9)
    assert omega[0, 0] == pytest.approx(0.7310585786, abs=1e-9)


def test_attention_temperature_sharpens():
    zeta = np.eye(2)
    images = EmbeddingMatrix(
        np.array([[1.0, 0.0]], dtype=np.float32), normalized=True
    )
    warm = grounding.attention_weights(images, zeta, tau=1.0)
    cold = grounding.attention_weights(images, zeta, tau=0.1)
    assert cold[0, 0] > warm[0, 0]
    with pytest.raises(InvariantError):
        grounding.attention_weights(images, zeta, tau=0.0)


def test_attention_rows_stochastic_and_shift_invariant(rng):
    kb = random_kb(rng, 5, 7)
    images = random_unit_matrix(rng, 20, 7)
    zeta = grounding.concept_reprs(kb)
    omega = grounding.attention_weights(images, zeta, tau=0.5)
    assert np.allclose(omega.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(omega > 0)
    # direct softmax without max-shift stabilisation as an oracle
    logits = (images.values.astype(np.float64) @ zeta.T) / 0.5
    raw = np.exp(logits)
    raw /= raw.sum(axis=1, keepdims=True)
    assert np.allclose(omega, raw, atol=1e-12)


def test_attention_dim_mismatch(rng):
    with pytest.raises(DimensionMismatchError):
        grounding.attention_weights(
            random_unit_matrix(rng, 2, 3), np.eye(4)[:2]
        )


# -------------------------------------------------------- instantiation


def test_hadamard_example():
    x = EmbeddingMatrix(
        np.array([[1.0, 2.0]], dtype=np.float32), normalized=False
    )
    kb = make_kb(
        [np.eye(2)[0]],
        attributes=[
            AttributeRecord(
                "a", "uni", (0,),
                embedding=np.array([3.0, 4.0], dtype=np.float32),
            )
        ],
    )
    mean_attr = grounding.instantiate_attributes(x, kb)
    assert np.allclose(mean_attr[0, 0], [3.0, 8.0], atol=1e-6)


def test_attribute_mean_of_unit_axes():
    x = EmbeddingMatrix(
        np.array([[1.0, 1.0]], dtype=np.float32), normalized=False
    )
    kb = make_kb(
        [np.eye(2)[0]],
        attributes=[
            AttributeRecord("a", "uni", (0,), embedding=np.eye(2)[0]),
            AttributeRecord("b", "uni", (0,), embedding=np.eye(2)[1]),
        ],
    )
    mean_attr = grounding.instantiate_attributes(x, kb)
    assert np.allclose(mean_attr[0, 0], [0.5, 0.5], atol=1e-7)


def test_concept_without_attributes_contributes_zero(rng):
    kb = make_kb(np.eye(4)[:2])  # no attributes at all
    images = random_unit_matrix(rng, 3, 4)
    mean_attr = grounding.instantiate_attributes(images, kb)
    assert np.all(mean_attr == 0.0)


def test_instantiate_matches_scalar_loop(rng):
    kb = random_kb(rng, 3, 6)
    images = random_unit_matrix(rng, 4, 6)
    mean_attr = grounding.instantiate_attributes(images, kb)
    x = images.values.astype(np.float64)
    for i in range(4):
        for qi, concept in enumerate(kb.concepts):
            records = kb.attributes_for(concept.id)
            for d in range(6):
                total = 0.0
                for r in records:
                    total += x[i, d] * float(r.embedding[d])
                expected = total / len(records) if records else 0.0
                assert abs(mean_attr[i, qi, d] - expected) < 1e-9


# ------------------------------------------------------------- grounding


def test_ground_matches_scalar_recomputation(rng):
    for trial in range(10):
        m = int(rng.integers(1, 6))
        d = int(rng.integers(2, 17))
        n = int(rng.integers(1, 11))
        kb = random_kb(rng, m, d)
        images = random_unit_matrix(rng, n, d)
        out = grounding.ground(images, kb, tau=0.7)
        x = images.values.astype(np.float64)
        zeta = out.zeta
        for i in range(n):
            # softmax by scalar loop
            logits = [
                sum(x[i, t] * zeta[q, t] for t in range(d)) / 0.7
                for q in range(m)
            ]
            mx = max(logits)
            exps = [math.exp(v - mx) for v in logits]
            z = sum(exps)
            weights = [e / z for e in exps]
            for q in range(m):
                assert abs(out.omega[i, q] - weights[q]) < 1e-9
            c_i = np.zeros(d)
            a_i = np.zeros(d)
            for q, concept in enumerate(kb.concepts):
                c_i += weights[q] * zeta[q]
                records = kb.attributes_for(concept.id)
                if records:
                    mean_xi = np.mean(
                        [r.embedding.astype(np.float64) for r in records],
                        axis=0,
                    )
                    a_i += weights[q] * (x[i] * mean_xi)
            assert np.allclose(out.concept_feat[i], c_i, atol=1e-6)
            assert np.allclose(out.attr_feat[i], a_i, atol=1e-6)
            kappa = c_i + a_i
            kappa /= np.linalg.norm(kappa)
            assert np.allclose(out.kappa[i], kappa, atol=1e-6)


def test_single_concept_collapse(rng):
    kb = random_kb(rng, 1, 5, attrs_per_concept=0, with_bi=False)
    images = random_unit_matrix(rng, 4, 5)
    out = grounding.ground(images, kb)
    # omega is all ones, no attributes: kappa is zeta_0 for every image
    for i in range(4):
        assert np.allclose(out.kappa[i], out.zeta[0], atol=1e-9)


def test_attributes_off_collapses_to_concept_feature(rng):
    kb = random_kb(rng, 3, 6)
    images = random_unit_matrix(rng, 5, 6)
    out = grounding.ground(images, kb, use_attributes=False)
    assert np.all(out.attr_feat == 0.0)
    expected = out.concept_feat / np.linalg.norm(
        out.concept_feat, axis=1, keepdims=True
    )
    assert np.allclose(out.kappa, expected, atol=1e-12)


def test_no_renormalize_keeps_raw_sum(rng):
    kb = random_kb(rng, 2, 4)
    images = random_unit_matrix(rng, 3, 4)
    out = grounding.ground(images, kb, renormalize_kappa=False)
    assert np.allclose(
        out.kappa, out.concept_feat + out.attr_feat, atol=1e-12
    )


def test_concat_left_half_bitwise(rng):
    kb = random_kb(rng, 3, 6)
    images = random_unit_matrix(rng, 7, 6)
    out = grounding.ground(images, kb)
    assert out.concat.shape == (7, 12)
    assert np.array_equal(out.concat[:, :6], images.values)
    assert np.allclose(
        out.concat[:, 6:], out.kappa.astype(np.float32), atol=0
    )
    matrix = grounding.concat_features(images, out)
    assert matrix.values.shape == (7, 12)
    assert np.array_equal(matrix.values, out.concat)


def test_kappa_rows_unit(rng):
    kb = random_kb(rng, 4, 8)
    images = random_unit_matrix(rng, 10, 8)
    out = grounding.ground(images, kb, tau=0.1)
    assert np.allclose(np.linalg.norm(out.kappa, axis=1), 1.0, atol=1e-9)
