"""Triplet, constrained-triplet, confusion-weighted softmax and joint losses.

Margin terms are hinged at zero. Embedding arguments may be single vectors
[d] or batches [N, d]; batched losses are arithmetic means over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class Margins:
    mu1: float = 0.5  # inter-class margin on squared distances
    mu2: float = 0.5  # cap on anchor-positive squared distance
    b: float = 1.0  # weight of the intra-class term
    alpha_t: float = 0.55  # softmax / triplet trade-off

    def __post_init__(self):
        if self.mu1 <= 0 or self.mu2 <= 0:
            raise ValueError("mu1 and mu2 must be positive")
        if self.b < 0:
            raise ValueError("b must be non-negative")
        if not 0.0 <= self.alpha_t <= 1.0:
            raise ValueError("alpha_t must be in [0, 1]")


def _batch(x: Tensor) -> Tensor:
    return T.reshape(x, (1, x.shape[0])) if x.ndim == 1 else x


def _sq_dists(a: Tensor, p: Tensor, n: Tensor) -> tuple[Tensor, Tensor]:
    if not (a.shape == p.shape == n.shape):
        raise ShapeError(f"embedding shapes differ: {a.shape}, {p.shape}, {n.shape}")
    a, p, n = _batch(a), _batch(p), _batch(n)
    d_ap = T.sum(T.square(T.sub(a, p)), axis=1)
    d_an = T.sum(T.square(T.sub(a, n)), axis=1)
    return d_ap, d_an


def triplet_loss(anchor: Tensor, positive: Tensor, negative: Tensor, mu1: float) -> Tensor:
    """mean over triplets of max(0, |a-p|^2 - |a-n|^2 + mu1)."""
    d_ap, d_an = _sq_dists(anchor, positive, negative)
    return T.mean(T.relu(T.add_scalar(T.sub(d_ap, d_an), mu1)))


def constrained_triplet_loss(anchor: Tensor, positive: Tensor, negative: Tensor,
                             margins: Margins) -> Tensor:
    """b * mean(max(0, |a-p|^2 - mu2)) + triplet_loss(mu1)."""
    d_ap, d_an = _sq_dists(anchor, positive, negative)
    inter = T.mean(T.relu(T.add_scalar(T.sub(d_ap, d_an), margins.mu1)))
    if margins.b == 0:
        return inter
    intra = T.mean(T.relu(T.add_scalar(d_ap, -margins.mu2)))
    return T.add(T.scale(intra, margins.b), inter)


class SimilarityMatrix:
    """Row-stochastic k x k matrix; row i is the expected softmax output of class-i samples."""

    def __init__(self, s, momentum: float = 0.9):
        s = np.array(s, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ShapeError(f"similarity matrix must be square, got {s.shape}")
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if (s < 0).any() or (s > 1).any() or not np.allclose(s.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("similarity matrix rows must be probability vectors")
        self.s = s
        self.momentum = momentum

    @property
    def k(self) -> int:
        return self.s.shape[0]

    @classmethod
    def uniform(cls, k: int, momentum: float = 0.9) -> "SimilarityMatrix":
        return cls(np.full((k, k), 1.0 / k), momentum)

    @classmethod
    def identity(cls, k: int, momentum: float = 0.9) -> "SimilarityMatrix":
        return cls(np.eye(k), momentum)

    def misclass_probs(self) -> np.ndarray:
        """P_i = sum of the off-diagonal entries of row i, for every class."""
        off = self.s.copy()
        np.fill_diagonal(off, 0.0)
        return off.sum(axis=1)

    def __repr__(self):
        return f"SimilarityMatrix(k={self.k}, momentum={self.momentum})"


def update_similarity_matrix(sm: SimilarityMatrix, softmax_outputs, labels) -> SimilarityMatrix:
    """Blend per-class mean softmax rows into ``sm``; classes absent from the batch keep their row."""
    probs = np.asarray(softmax_outputs.data if isinstance(softmax_outputs, Tensor) else softmax_outputs,
                       dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    if probs.ndim != 2 or probs.shape[1] != sm.k or len(labels) != len(probs):
        raise ShapeError(f"softmax outputs {probs.shape} do not match k={sm.k} and {len(labels)} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= sm.k):
        raise ValueError("label out of range")
    est = sm.s.copy()
    for c in range(sm.k):
        rows = probs[labels == c]
        if len(rows):
            est[c] = rows.mean(axis=0)
    new = sm.momentum * sm.s + (1.0 - sm.momentum) * est
    new = np.clip(new, 0.0, 1.0)
    new /= new.sum(axis=1, keepdims=True)
    return SimilarityMatrix(new, sm.momentum)


def misclass_prob(sm: SimilarityMatrix, i: int) -> float:
    if not 0 <= i < sm.k:
        raise ValueError(f"class id {i} out of range for k={sm.k}")
    return float(sm.s[i].sum() - sm.s[i, i])


def weighted_softmax_loss(softmax_outputs: Tensor, labels, sm: SimilarityMatrix | None) -> Tensor:
    """mean_i -P_{y_i} * log(p_i[y_i]); ``sm=None`` gives plain cross-entropy."""
    labels = np.asarray(labels, dtype=np.intp)
    p_true = T.log(T.pick(softmax_outputs, labels), floor=PROB_FLOOR)
    if sm is None:
        return T.scale(T.mean(p_true), -1.0)
    if sm.k != softmax_outputs.shape[1]:
        raise ShapeError(f"similarity matrix has k={sm.k}, outputs have {softmax_outputs.shape[1]} classes")
    weights = sm.misclass_probs()[labels]
    return T.scale(T.mean(T.mul(p_true, Tensor(weights))), -1.0)


def cross_entropy(softmax_outputs: Tensor, labels) -> Tensor:
    return weighted_softmax_loss(softmax_outputs, labels, None)


def joint_loss(l_softmax: Tensor, l_triplet: Tensor, alpha_t: float) -> Tensor:
    """alpha_t * l_softmax + (1 - alpha_t) * l_triplet."""
    if not 0.0 <= alpha_t <= 1.0:
        raise ValueError(f"alpha_t must be in [0, 1], got {alpha_t}")
    return T.add(T.scale(l_softmax, alpha_t), T.scale(l_triplet, 1.0 - alpha_t))
