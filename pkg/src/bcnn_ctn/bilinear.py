"""Bilinear pooling: per-location outer products of two feature streams,
pooled over locations, then signed square root and L2 normalisation."""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass
class BilinearFeature:
    vector: Tensor
    n: int
    m: int


def bilinear_combine(fa: Tensor, fb: Tensor) -> Tensor:
    """Outer product of one location's feature vectors: out[i, j] = fa[i] * fb[j]."""
    if fa.ndim != 1 or fb.ndim != 1:
        raise ShapeError(f"bilinear_combine expects vectors, got {fa.shape}, {fb.shape}")
    return T.matmul(T.reshape(fa, (fa.shape[0], 1)), T.reshape(fb, (1, fb.shape[0])))


def bilinear_pool(map_a: Tensor, map_b: Tensor, pooling: str = "sum") -> Tensor:
    """Pool outer products over locations.

    ``map_a`` is [Y, N] (or [B, Y, N]) and ``map_b`` is [Y, M] (or [B, Y, M]).
    Returns [N, M] (or [B, N, M]). ``pooling="avg"`` divides by Y.
    """
    if map_a.ndim != map_b.ndim or map_a.ndim not in (2, 3):
        raise ShapeError(f"bilinear_pool: bad ranks {map_a.shape}, {map_b.shape}")
    y_axis = map_a.ndim - 2
    if map_a.shape[:-1] != map_b.shape[:-1]:
        raise ShapeError(f"bilinear_pool: location counts differ, {map_a.shape} vs {map_b.shape}")
    axes = (1, 0) if map_a.ndim == 2 else (0, 2, 1)
    pooled = T.matmul(T.transpose(map_a, axes), map_b)
    if pooling == "avg":
        pooled = T.scale(pooled, 1.0 / map_a.shape[y_axis])
    elif pooling != "sum":
        raise ValueError(f"unknown pooling {pooling!r}")
    return pooled


def normalize_pooled(pooled: Tensor) -> Tensor:
    """flatten -> signed sqrt -> L2 normalise; [N, M] -> [N*M] or [B, N, M] -> [B, N*M]."""
    if pooled.ndim == 2:
        flat = T.reshape(pooled, (pooled.shape[0] * pooled.shape[1],))
    else:
        flat = T.reshape(pooled, (pooled.shape[0], pooled.shape[1] * pooled.shape[2]))
    return T.l2_normalize(T.signed_sqrt(flat), axis=-1)


def bilinear_head(map_a: Tensor, map_b: Tensor, pooling: str = "sum") -> BilinearFeature:
    pooled = bilinear_pool(map_a, map_b, pooling)
    return BilinearFeature(normalize_pooled(pooled), map_a.shape[-1], map_b.shape[-1])
