import numpy as np
import pytest
from hypothesis import given, strategies as st

from bcnn_ctn.data import make_synthetic
from bcnn_ctn.losses import SimilarityMatrix
from bcnn_ctn.mining import (SamplerConfig, TripletBatch, class_pair_weights, mine_hard_triplets,
                             pairwise_distances, sample_batch)

D4 = np.array([[0, 1, 2, 3], [1, 0, .5, 4], [2, .5, 0, 1.5], [3, 4, 1.5, 0]], dtype=float)
L4 = np.array([0, 0, 1, 1])


def exhaustive_hard(D, labels):
    out = []
    for a in range(len(labels)):
        pos = [j for j in range(len(labels)) if j != a and labels[j] == labels[a]]
        neg = [j for j in range(len(labels)) if labels[j] != labels[a]]
        if not pos:
            continue
        p = min(pos, key=lambda j: (-D[a, j], j))
        n = min(neg, key=lambda j: (D[a, j], j))
        out.append((a, p, n))
    return out


def test_hard_by_hand():
    assert mine_hard_triplets(D4, L4, "hard") == [(0, 1, 2), (1, 0, 2), (2, 3, 1), (3, 2, 0)]


def test_semi_hard_by_hand():
    assert mine_hard_triplets(D4, L4, "semi_hard") == [(0, 1, 2), (1, 0, 3), (2, 3, 0), (3, 2, 0)]


def test_ties_pick_lowest_index():
    D = np.zeros((4, 4))
    assert mine_hard_triplets(D, L4, "hard") == [(0, 1, 2), (1, 0, 2), (2, 3, 0), (3, 2, 0)]


@given(st.integers(0, 2**32 - 1), st.integers(2, 16))
def test_hard_matches_exhaustive(seed, b):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 3, b)
    if len(np.unique(labels)) < 2:
        labels[0], labels[-1] = 0, 1
    D = pairwise_distances(rng.integers(0, 3, size=(b, 2)).astype(float))  # coarse grid: many ties
    assert mine_hard_triplets(D, labels, "hard") == exhaustive_hard(D, labels)


def test_singleton_anchor_skipped_and_labels_valid(rng):
    labels = np.array([0, 0, 1, 2])
    trip = mine_hard_triplets(pairwise_distances(rng.normal(size=(4, 3))), labels, "random", rng)
    assert [t[0] for t in trip] == [0, 1]
    TripletBatch(np.zeros((4, 1, 1, 1)), labels, trip).validate()


def test_mining_errors():
    with pytest.raises(ValueError):
        mine_hard_triplets(np.zeros((3, 3)), [1, 1, 1])
    with pytest.raises(ValueError):
        mine_hard_triplets(D4, L4, "random")
    with pytest.raises(ValueError):
        TripletBatch(np.zeros((4, 1, 1, 1)), L4, [(0, 2, 3)]).validate()


def test_pairwise_distances_by_hand():
    D = pairwise_distances(np.array([[0.0, 0.0], [3.0, 4.0]]))
    np.testing.assert_array_equal(D, [[0, 25], [25, 0]])


def test_class_pair_weights_by_hand():
    s = np.array([[0.5, 0.5, 0.0], [0.2, 0.8, 0.0], [0.0, 0.0, 1.0]])
    w = class_pair_weights(s)
    assert w[0, 1] == pytest.approx(1 / 3 + 0.7)
    assert w[0, 2] == pytest.approx(1 / 3)
    assert w[1, 0] == 0.0


def test_sample_batch_composition(rng):
    ds = make_synthetic(5, 10, (8, 8), seed=0)
    cfg = SamplerConfig(classes_per_batch=3, samples_per_class=4)
    batch = sample_batch(ds, cfg, SimilarityMatrix.uniform(5), rng)
    assert batch.images.shape == (12, 3, 8, 8)
    assert sorted(np.bincount(batch.labels, minlength=5).tolist()) == [0, 0, 4, 4, 4]
    assert len(set(batch.indices.tolist())) == 12
    np.testing.assert_array_equal(ds.labels[batch.indices], batch.labels)


def test_oversampling_favours_confused_pair(rng):
    ds = make_synthetic(4, 4, (4, 4), seed=0)
    s = np.eye(4)
    s[0] = [0.5, 0.5, 0, 0]
    sm = SimilarityMatrix(s)
    cfg = SamplerConfig(classes_per_batch=2, samples_per_class=2)
    hits = sum(set(sample_batch(ds, cfg, sm, rng).labels) == {0, 1} for _ in range(2000))
    # weight of (0, 1) is 1/4 + 0.5 against 1/4 for each of the other five pairs
    expected = 0.75 / (0.75 + 5 * 0.25)
    assert abs(hits / 2000 - expected) < 0.04


def test_small_class_rejected(rng):
    ds = make_synthetic(3, 2, (4, 4), seed=0)
    with pytest.raises(ValueError):
        sample_batch(ds, SamplerConfig(2, 3), None, rng)
