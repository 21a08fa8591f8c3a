"""Central finite-difference checks of tape gradients.

``check_gradients`` compares the tape gradient of a scalar function against
central differences for every named input. ``run_suite`` exercises every
differentiable op, every loss and a small full network over random
configurations; it backs both the test suite and the ``gradcheck`` command.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .tensor import GradTape, Tensor

logger = logging.getLogger(__name__)

STEP = 1e-5
TOLERANCE = 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    return float(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-8))


def numeric_gradient(fn: Callable[[], Tensor], x: np.ndarray, step: float = STEP) -> np.ndarray:
    """Central differences of ``fn()`` w.r.t. the array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = fn().item()
        flat[i] = orig - step
        down = fn().item()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return grad


def check_gradients(fn: Callable[[], Tensor], inputs: dict[str, Tensor],
                    step: float = STEP) -> dict[str, float]:
    """Relative error per input between tape and finite-difference gradients."""
    with GradTape(dict(inputs)) as tape:
        loss = fn()
    analytic = tape.backward(loss)
    for t in inputs.values():
        t.requires_grad = False
    errors = {}
    for name, t in inputs.items():
        numeric = numeric_gradient(fn, t.data, step)
        errors[name] = relative_error(analytic[name], numeric)
    return errors


@dataclass
class CaseResult:
    name: str
    trials: int
    worst: float

    @property
    def passed(self) -> bool:
        return self.worst < TOLERANCE


def _away_from_zero(rng, shape, lo=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < lo, np.sign(x + 1e-300) * lo, x)


def _op_cases():
    """name -> builder(rng) returning (fn, inputs) for one random configuration."""

    def weighted_sum(out, rng):
        w = Tensor(rng.normal(size=out.shape))
        return T.sum(T.mul(out, w))

    def unary(op, make=None):
        def build(rng):
            shape = (int(rng.integers(2, 5)), int(rng.integers(2, 6)))
            x = Tensor(make(rng, shape) if make else rng.normal(size=shape))
            w = rng.normal(size=shape)
            return (lambda: T.sum(T.mul(op(x), Tensor(w)))), {"x": x}
        return build

    def matmul_case(rng):
        m, k, n = (int(v) for v in rng.integers(1, 6, size=3))
        a, b = Tensor(rng.normal(size=(m, k))), Tensor(rng.normal(size=(k, n)))
        w = rng.normal(size=(m, n))
        return (lambda: T.sum(T.mul(T.matmul(a, b), Tensor(w)))), {"a": a, "b": b}

    def bmatmul_case(rng):
        bsz, m, k, n = (int(v) for v in rng.integers(1, 5, size=4))
        a, b = Tensor(rng.normal(size=(bsz, m, k))), Tensor(rng.normal(size=(bsz, k, n)))
        w = rng.normal(size=(bsz, m, n))
        return (lambda: T.sum(T.mul(T.matmul(a, b), Tensor(w)))), {"a": a, "b": b}

    def conv_case(rng):
        c_in, c_out = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        k = int(rng.integers(1, 4))
        stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
        batched = bool(rng.integers(0, 2))
        shape = (2, c_in, 5, 5) if batched else (c_in, 5, 5)
        x = Tensor(rng.normal(size=shape))
        kern = Tensor(rng.normal(size=(c_out, c_in, k, k)))
        bias = Tensor(rng.normal(size=(c_out,)))
        out_shape = T.conv2d(x, kern, stride, pad, bias).shape
        w = rng.normal(size=out_shape)
        return (lambda: T.sum(T.mul(T.conv2d(x, kern, stride, pad, bias), Tensor(w)))), \
            {"x": x, "kernels": kern, "bias": bias}

    def binary(op):
        def build(rng):
            shape = (int(rng.integers(1, 5)), int(rng.integers(1, 5)))
            a, b = Tensor(rng.normal(size=shape)), Tensor(rng.normal(size=shape))
            w = rng.normal(size=shape)
            return (lambda: T.sum(T.mul(op(a, b), Tensor(w)))), {"a": a, "b": b}
        return build

    def pool_case(rng):
        x = Tensor(rng.normal(size=(2, 2, 5, 4)))
        w = rng.normal(size=(2, 2, 2, 2))
        return (lambda: T.sum(T.mul(T.max_pool2d(x, 2), Tensor(w)))), {"x": x}

    def gap_case(rng):
        x = Tensor(rng.normal(size=(2, 3, 4, 5)))
        w = rng.normal(size=(2, 3))
        return (lambda: T.sum(T.mul(T.global_avg_pool(x), Tensor(w)))), {"x": x}

    def softmax_case(rng):
        x = Tensor(rng.normal(size=(1, 8)) * 2)
        w = rng.normal(size=(1, 8))
        return (lambda: T.sum(T.mul(T.softmax(x), Tensor(w)))), {"x": x}

    def dropout_case(rng):
        x = Tensor(rng.normal(size=(3, 6)))
        seed = int(rng.integers(1 << 30))
        w = rng.normal(size=(3, 6))
        return (lambda: T.sum(T.mul(T.dropout(x, 0.4, np.random.default_rng(seed), True), Tensor(w)))), \
            {"x": x}

    def reduce_case(rng):
        x = Tensor(rng.normal(size=(3, 4)))
        w = rng.normal(size=(4,))
        return (lambda: T.add(T.sum(T.mul(T.mean(x, 0), Tensor(w))), T.mean(x))), {"x": x}

    def bias_case(rng):
        x, b = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(4,)))
        w = rng.normal(size=(3, 4))
        return (lambda: T.sum(T.mul(T.add_bias(x, b), Tensor(w)))), {"x": x, "bias": b}

    def index_case(rng):
        x = Tensor(rng.normal(size=(5, 3)))
        idx = rng.integers(0, 5, size=7)
        cols = rng.integers(0, 3, size=7)
        w = rng.normal(size=(7,))
        return (lambda: T.sum(T.mul(T.pick(T.take(x, idx), cols), Tensor(w)))), {"x": x}

    def shape_case(rng):
        x = Tensor(rng.normal(size=(2, 3, 4)))
        w = rng.normal(size=(4, 6))
        return (lambda: T.sum(T.mul(T.reshape(T.transpose(x, (2, 0, 1)), (4, 6)), Tensor(w)))), {"x": x}

    return {
        "matmul": matmul_case,
        "batched_matmul": bmatmul_case,
        "conv2d": conv_case,
        "relu": unary(T.relu, _away_from_zero),
        "signed_sqrt": unary(T.signed_sqrt, _away_from_zero),
        "square": unary(T.square),
        "scale": unary(lambda x: T.scale(x, -1.7)),
        "log": unary(lambda x: T.log(x), lambda rng, s: rng.uniform(0.2, 3.0, size=s)),
        "l2_normalize": unary(T.l2_normalize),
        "add": binary(T.add),
        "sub": binary(T.sub),
        "mul": binary(T.mul),
        "max_pool2d": pool_case,
        "global_avg_pool": gap_case,
        "softmax": softmax_case,
        "dropout": dropout_case,
        "sum_mean": reduce_case,
        "add_bias": bias_case,
        "take_pick": index_case,
        "reshape_transpose": shape_case,
    }


def _loss_cases():
    from . import losses as L
    from .losses import Margins, SimilarityMatrix

    def unit_rows(rng, n, d):
        x = rng.normal(size=(n, d))
        return x / np.linalg.norm(x, axis=1, keepdims=True)

    def hinge_safe(a, p, n, mu1, mu2=None):
        dap = ((a - p) ** 2).sum(1)
        dan = ((a - n) ** 2).sum(1)
        ok = np.abs(dap - dan + mu1).min() > 1e-3
        if mu2 is not None:
            ok = ok and np.abs(dap - mu2).min() > 1e-3
        return ok

    def triplet(rng):
        while True:
            n, d = int(rng.integers(2, 7)), int(rng.integers(2, 6))
            a, p, q = unit_rows(rng, n, d), unit_rows(rng, n, d), unit_rows(rng, n, d)
            mu1 = float(rng.uniform(0.2, 1.0))
            if hinge_safe(a, p, q, mu1):
                break
        ta, tp, tn = Tensor(a), Tensor(p), Tensor(q)
        return (lambda: L.triplet_loss(ta, tp, tn, mu1)), {"anchor": ta, "positive": tp, "negative": tn}

    def constrained(rng):
        while True:
            n, d = int(rng.integers(2, 7)), int(rng.integers(2, 6))
            a, p, q = unit_rows(rng, n, d), unit_rows(rng, n, d), unit_rows(rng, n, d)
            m = Margins(mu1=float(rng.uniform(0.2, 1.0)), mu2=float(rng.uniform(0.2, 1.5)),
                        b=float(rng.uniform(0.1, 2.0)))
            if hinge_safe(a, p, q, m.mu1, m.mu2):
                break
        ta, tp, tn = Tensor(a), Tensor(p), Tensor(q)
        return (lambda: L.constrained_triplet_loss(ta, tp, tn, m)), \
            {"anchor": ta, "positive": tp, "negative": tn}

    def weighted_softmax(rng):
        b, k = int(rng.integers(2, 7)), int(rng.integers(2, 6))
        logits = Tensor(rng.normal(size=(b, k)))
        labels = rng.integers(0, k, size=b)
        sm = SimilarityMatrix(rng.dirichlet(np.ones(k), size=k))
        return (lambda: L.weighted_softmax_loss(T.softmax(logits), labels, sm)), {"logits": logits}

    def joint(rng):
        while True:
            b, k, d = 4, int(rng.integers(2, 5)), int(rng.integers(2, 5))
            a, p, q = unit_rows(rng, b, d), unit_rows(rng, b, d), unit_rows(rng, b, d)
            m = Margins(mu1=0.5, mu2=0.5, b=1.0)
            if hinge_safe(a, p, q, m.mu1, m.mu2):
                break
        alpha = float(rng.uniform())
        logits = Tensor(rng.normal(size=(b, k)))
        labels = rng.integers(0, k, size=b)
        sm = SimilarityMatrix(rng.dirichlet(np.ones(k), size=k))
        ta, tp, tn = Tensor(a), Tensor(p), Tensor(q)

        def fn():
            ls = L.weighted_softmax_loss(T.softmax(logits), labels, sm)
            lt = L.constrained_triplet_loss(ta, tp, tn, m)
            return L.joint_loss(ls, lt, alpha)

        return fn, {"logits": logits, "anchor": ta, "positive": tp, "negative": tn}

    return {
        "triplet_loss": triplet,
        "constrained_triplet_loss": constrained,
        "weighted_softmax_loss": weighted_softmax,
        "joint_loss": joint,
    }


def network_case(rng):
    """Joint loss of a tiny two-block network with fixed mined triplets."""
    from .backbone import BackboneConfig, ConvBlock, init_parameters
    from .losses import Margins, SimilarityMatrix, constrained_triplet_loss, joint_loss, weighted_softmax_loss
    from .mining import mine_hard_triplets, pairwise_distances

    k = 2
    shared = bool(rng.integers(0, 2))
    pooling = "sum" if rng.integers(0, 2) else "avg"
    cfg = BackboneConfig(
        input_size=(2, 6, 6),
        conv_blocks=(ConvBlock(3, 3, 1, 2), ConvBlock(3, 3, 1, 1)),
        embedding_dim=3, num_classes=k, shared_streams=shared, pooling=pooling,
    )
    margins = Margins(mu1=0.5, mu2=0.3, b=1.0)
    labels = np.array([0, 0, 1, 1])
    sm = SimilarityMatrix(rng.dirichlet(np.ones(k), size=k))
    for _ in range(100):
        net = init_parameters(cfg, int(rng.integers(1 << 30)))
        for p in net.params.values():
            p.data += rng.normal(scale=0.1, size=p.shape)
        images = rng.normal(size=(4, 2, 6, 6))
        out = net.forward(images)
        emb = out.embeddings.data
        trip = np.array(mine_hard_triplets(pairwise_distances(emb), labels, "hard"))
        a, p, n = emb[trip[:, 0]], emb[trip[:, 1]], emb[trip[:, 2]]
        dap, dan = ((a - p) ** 2).sum(1), ((a - n) ** 2).sum(1)
        margins_ok = np.abs(dap - dan + margins.mu1).min() > 1e-3 and np.abs(dap - margins.mu2).min() > 1e-3
        pooled = np.abs(out.pooled.data)
        pooled_ok = not ((pooled > 0) & (pooled < 1e-3)).any()
        if margins_ok and pooled_ok:
            break
    else:
        raise RuntimeError("could not draw a network configuration away from kinks")

    def fn():
        o = net.forward(images)
        e = o.embeddings
        lt = constrained_triplet_loss(T.take(e, trip[:, 0]), T.take(e, trip[:, 1]), T.take(e, trip[:, 2]), margins)
        ls = weighted_softmax_loss(o.probs, labels, sm)
        return joint_loss(ls, lt, 0.5)

    return fn, dict(net.params)


def run_suite(trials: int = 20, seed: int = 0, include_network: bool = True) -> list[CaseResult]:
    rng = np.random.default_rng(seed)
    cases = {**_op_cases(), **_loss_cases()}
    if include_network:
        cases["full_network"] = network_case
    results = []
    for name, build in cases.items():
        t0 = time.perf_counter()
        worst = 0.0
        for _ in range(trials):
            fn, inputs = build(rng)
            errs = check_gradients(fn, inputs)
            worst = max(worst, max(errs.values()))
        results.append(CaseResult(name, trials, worst))
        logger.info("%s: worst rel err %.2e over %d trials (%.1fs)", name, worst, trials,
                    time.perf_counter() - t0)
    return results
