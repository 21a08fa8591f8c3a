"""Online triplet mining inside a mini-batch and class-aware batch sampling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

STRATEGIES = ("hard", "semi_hard", "random")


@dataclass
class TripletBatch:
    images: np.ndarray  # [B, C, H, W]
    labels: np.ndarray  # [B]
    triplets: list[tuple[int, int, int]] = field(default_factory=list)
    indices: np.ndarray | None = None  # dataset rows the batch was drawn from

    def validate(self):
        b = len(self.labels)
        for a, p, n in self.triplets:
            if not (0 <= a < b and 0 <= p < b and 0 <= n < b):
                raise ValueError(f"triplet {(a, p, n)} indexes outside a batch of {b}")
            if a == p or self.labels[a] != self.labels[p] or self.labels[a] == self.labels[n]:
                raise ValueError(f"triplet {(a, p, n)} violates label constraints")


@dataclass(frozen=True)
class SamplerConfig:
    classes_per_batch: int = 4
    samples_per_class: int = 8
    strategy: str = "semi_hard"
    oversample_with_similarity: bool = True

    def __post_init__(self):
        if self.classes_per_batch < 2 or self.samples_per_class < 2:
            raise ValueError("need at least 2 classes per batch and 2 samples per class")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")

    @property
    def batch_size(self) -> int:
        return self.classes_per_batch * self.samples_per_class


def pairwise_distances(embeddings) -> np.ndarray:
    """Squared Euclidean distance matrix of the rows of ``embeddings``."""
    e = np.asarray(embeddings.data if isinstance(embeddings, Tensor) else embeddings, dtype=np.float64)
    diff = e[:, None, :] - e[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def mine_hard_triplets(D, labels, strategy: str = "hard",
                       rng: np.random.Generator | None = None) -> list[tuple[int, int, int]]:
    """One (anchor, positive, negative) triple per anchor that has a positive.

    hard: farthest positive, nearest negative. semi_hard: farthest positive,
    nearest negative farther than that positive (else the nearest negative).
    random: uniform choices from ``rng``. Ties resolve to the lowest index.
    """
    D = np.asarray(D, dtype=np.float64)
    labels = np.asarray(labels)
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if len(np.unique(labels)) < 2:
        raise ValueError("batch needs at least two classes to form negatives")
    if strategy == "random" and rng is None:
        raise ValueError("random strategy needs an rng")
    idx = np.arange(len(labels))
    out = []
    for a in idx:
        pos = idx[(labels == labels[a]) & (idx != a)]
        if len(pos) == 0:
            continue
        neg = idx[labels != labels[a]]
        if strategy == "random":
            out.append((int(a), int(rng.choice(pos)), int(rng.choice(neg))))
            continue
        p = pos[np.argmax(D[a, pos])]
        n = neg[np.argmin(D[a, neg])]
        if strategy == "semi_hard":
            farther = neg[D[a, neg] > D[a, p]]
            if len(farther):
                n = farther[np.argmin(D[a, farther])]
        out.append((int(a), int(p), int(n)))
    return out


def class_pair_weights(s: np.ndarray) -> np.ndarray:
    """Weight of each unordered class pair: 1/k + confusion mass S[i,j] + S[j,i]."""
    k = s.shape[0]
    w = 1.0 / k + s + s.T
    np.fill_diagonal(w, 0.0)
    return np.triu(w, 1)


def choose_classes(k: int, p: int, sm, oversample: bool, rng: np.random.Generator) -> np.ndarray:
    if p > k:
        raise ValueError(f"cannot draw {p} classes per batch from {k} classes")
    if not oversample or sm is None:
        return np.sort(rng.choice(k, size=p, replace=False))
    w = class_pair_weights(sm.s)
    flat = w.ravel() / w.sum()
    i, j = divmod(int(rng.choice(flat.size, p=flat)), k)
    rest = np.setdiff1d(np.arange(k), [i, j])
    extra = rng.choice(rest, size=p - 2, replace=False) if p > 2 else np.array([], dtype=int)
    return np.sort(np.concatenate([[i, j], extra]).astype(int))


def sample_batch(dataset, config: SamplerConfig, sm, rng: np.random.Generator) -> TripletBatch:
    """Draw ``classes_per_batch`` classes and ``samples_per_class`` images of each.

    With ``oversample_with_similarity``, one class pair is drawn with
    probability proportional to 1/k plus its off-diagonal similarity mass, so
    confusable classes share batches more often; the remaining classes are
    uniform. Triplets are left empty; they are mined online from embeddings.
    """
    labels = np.asarray(dataset.labels)
    k = dataset.num_classes
    by_class = [np.flatnonzero(labels == c) for c in range(k)]
    q = config.samples_per_class
    for c, rows in enumerate(by_class):
        if len(rows) < q:
            raise ValueError(f"class {c} has {len(rows)} samples, fewer than samples_per_class={q}")
    classes = choose_classes(k, config.classes_per_batch, sm, config.oversample_with_similarity, rng)
    rows = np.concatenate([rng.choice(by_class[c], size=q, replace=False) for c in classes])
    return TripletBatch(dataset.images[rows], labels[rows], [], rows)
