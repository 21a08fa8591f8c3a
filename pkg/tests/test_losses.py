import numpy as np
import pytest
from hypothesis import given, strategies as st

from bcnn_ctn.losses import (Margins, SimilarityMatrix, constrained_triplet_loss, cross_entropy, joint_loss,
                             misclass_prob, triplet_loss, update_similarity_matrix, weighted_softmax_loss)
from bcnn_ctn.tensor import ShapeError, Tensor

seeds = st.integers(0, 2**32 - 1)


def unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def probs(rng, n, k):
    return rng.dirichlet(np.ones(k), size=n)


def test_constrained_triplet_by_hand():
    a, p, n = Tensor(np.array([1.0, 0.0])), Tensor(np.array([0.6, 0.8])), Tensor(np.array([0.0, 1.0]))
    # |a-p|^2 = 0.8, |a-n|^2 = 2: inter hinge inactive, intra = 2 * (0.8 - 0.5)
    assert constrained_triplet_loss(a, p, n, Margins(b=2.0)).item() == pytest.approx(0.6)
    assert triplet_loss(a, p, n, 0.5).item() == 0.0
    assert triplet_loss(a, n, p, 0.5).item() == pytest.approx(2 - 0.8 + 0.5)


def test_triplet_loss_is_batch_mean(rng):
    a, p, n = (unit_rows(rng, 5, 4) for _ in range(3))
    each = [triplet_loss(Tensor(a[i]), Tensor(p[i]), Tensor(n[i]), 0.3).item() for i in range(5)]
    assert triplet_loss(Tensor(a), Tensor(p), Tensor(n), 0.3).item() == pytest.approx(np.mean(each))


@given(seeds, st.floats(0.05, 2.0), st.floats(0.05, 2.0))
def test_b_zero_is_plain_triplet(seed, mu1, mu2):
    rng = np.random.default_rng(seed)
    a, p, n = (Tensor(unit_rows(rng, 6, 3)) for _ in range(3))
    m = Margins(mu1=mu1, mu2=mu2, b=0.0)
    assert constrained_triplet_loss(a, p, n, m).item() == triplet_loss(a, p, n, mu1).item()


@given(seeds)
def test_losses_non_negative(seed):
    rng = np.random.default_rng(seed)
    a, p, n = (Tensor(unit_rows(rng, 4, 3)) for _ in range(3))
    assert constrained_triplet_loss(a, p, n, Margins()).item() >= 0


def test_triplet_shape_mismatch():
    with pytest.raises(ShapeError):
        triplet_loss(Tensor(np.ones(3)), Tensor(np.ones(3)), Tensor(np.ones(4)), 0.5)


def test_weighted_softmax_by_hand():
    sm = SimilarityMatrix([[0.6, 0.3, 0.1], [0.1, 0.8, 0.1], [0.0, 0.5, 0.5]])
    p = Tensor(np.array([[0.7, 0.2, 0.1], [0.3, 0.3, 0.4]]))
    expected = -(0.4 * np.log(0.7) + 0.5 * np.log(0.4)) / 2
    assert weighted_softmax_loss(p, [0, 2], sm).item() == pytest.approx(expected, abs=1e-15)
    assert misclass_prob(sm, 2) == pytest.approx(0.5)
    np.testing.assert_allclose(sm.misclass_probs(), [0.4, 0.2, 0.5])


@given(seeds, st.integers(2, 8))
def test_identity_matrix_gives_zero(seed, k):
    rng = np.random.default_rng(seed)
    p = Tensor(probs(rng, 10, k))
    assert weighted_softmax_loss(p, rng.integers(0, k, 10), SimilarityMatrix.identity(k)).item() == 0.0


@given(seeds, st.integers(2, 8))
def test_uniform_matrix_scales_cross_entropy(seed, k):
    rng = np.random.default_rng(seed)
    p = Tensor(probs(rng, 10, k))
    y = rng.integers(0, k, 10)
    ce = cross_entropy(p, y).item()
    assert weighted_softmax_loss(p, y, SimilarityMatrix.uniform(k)).item() == pytest.approx((k - 1) / k * ce,
                                                                                           abs=1e-12)


def test_probability_floor():
    p = Tensor(np.array([[1.0, 0.0]]))
    assert cross_entropy(p, [1]).item() == pytest.approx(-np.log(1e-12))


@given(seeds)
def test_joint_boundaries_exact(seed):
    rng = np.random.default_rng(seed)
    ls, lt = Tensor(np.array(rng.random())), Tensor(np.array(rng.random()))
    assert joint_loss(ls, lt, 1.0).item() == ls.item()
    assert joint_loss(ls, lt, 0.0).item() == lt.item()
    assert joint_loss(ls, lt, 0.25).item() == pytest.approx(0.25 * ls.item() + 0.75 * lt.item())
    with pytest.raises(ValueError):
        joint_loss(ls, lt, 1.5)


def test_similarity_update_by_hand():
    sm = SimilarityMatrix.uniform(2)
    new = update_similarity_matrix(sm, [[0.8, 0.2], [1.0, 0.0]], [0, 0])
    np.testing.assert_allclose(new.s[0], [0.9 * 0.5 + 0.1 * 0.9, 0.9 * 0.5 + 0.1 * 0.1])
    np.testing.assert_array_equal(new.s[1], [0.5, 0.5])  # class 1 absent: row kept


@given(seeds, st.integers(2, 6))
def test_similarity_update_stays_stochastic(seed, k):
    rng = np.random.default_rng(seed)
    sm = SimilarityMatrix.uniform(k)
    for _ in range(5):
        sm = update_similarity_matrix(sm, probs(rng, 12, k), rng.integers(0, k, 12))
    np.testing.assert_allclose(sm.s.sum(1), 1.0, atol=1e-12)
    assert (sm.s >= 0).all()


def test_similarity_matrix_validation():
    with pytest.raises(ValueError):
        SimilarityMatrix([[0.5, 0.6], [0.5, 0.5]])
    with pytest.raises(ShapeError):
        SimilarityMatrix(np.ones((2, 3)) / 3)
    with pytest.raises(ValueError):
        misclass_prob(SimilarityMatrix.uniform(2), 2)


@pytest.mark.parametrize("kw", [{"mu1": 0}, {"mu2": -1}, {"b": -0.1}, {"alpha_t": 1.2}])
def test_margin_validation(kw):
    with pytest.raises(ValueError):
        Margins(**kw)
