"""Dense float tensors with a tape-based reverse-mode gradient.

Only the operations the rest of the package needs are provided. Every op
takes and returns :class:`Tensor` values; when a :class:`GradTape` is active
and at least one input requires a gradient, the op is recorded on the tape
together with a closure that maps the output gradient to input gradients.

Shapes are checked explicitly. There is no broadcasting except between a
tensor and a Python scalar (``scale``), plus the two explicit helpers
``add_bias`` (row bias) and ``add_channel_bias`` used by the layers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

logger = logging.getLogger(__name__)

DTYPE = np.float64


class NonFiniteError(ArithmeticError):
    """Raised when an op produces NaN or Inf."""


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=DTYPE, copy=True) if not isinstance(data, np.ndarray) \
            else np.asarray(data, dtype=DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(())
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"every dimension must be >= 1, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise NonFiniteError("tensor data contains NaN or Inf")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, _as_tensor(other, self.shape))

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.shape))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x, shape) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if np.isscalar(x):
        return Tensor(np.full(shape, float(x)))
    return Tensor(x)


def constant(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------------
# tape


@dataclass
class _Node:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str


_ACTIVE: list["GradTape"] = []


@dataclass
class GradTape:
    """Records differentiable ops in execution order.

    Use as a context manager. Parameters registered with :meth:`watch` (or
    passed to the constructor) always get a gradient from :meth:`backward`,
    zero if the loss does not depend on them.
    """

    params: dict[str, Tensor] = field(default_factory=dict)
    ops: list[_Node] = field(default_factory=list)

    def __post_init__(self):
        for p in self.params.values():
            p.requires_grad = True

    def watch(self, name: str, tensor: Tensor) -> Tensor:
        tensor.requires_grad = True
        self.params[name] = tensor
        return tensor

    def __enter__(self) -> "GradTape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def record(self, out, inputs, backward, op):
        self.ops.append(_Node(out, tuple(inputs), backward, op))

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.ops):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        result = {}
        for name, p in self.params.items():
            g = grads.get(id(p))
            p.grad = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=DTYPE).reshape(p.shape)
            result[name] = p.grad
        return result


def _make(data: np.ndarray, inputs: Iterable[Tensor], backward, op: str) -> Tensor:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced a non-finite value")
    inputs = tuple(inputs)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    tape = _ACTIVE[-1] if _ACTIVE else None
    out.requires_grad = tape is not None and any(t.requires_grad for t in inputs)
    if out.requires_grad:
        tape.record(out, inputs, backward, op)
    return out


def _check_same(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# --------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product, or a batched product when both inputs are 3-D."""
    if a.ndim == 2 and b.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: inner dims {a.shape} x {b.shape}")
        A, B = a.data, b.data
        return _make(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g), "matmul")
    if a.ndim == 3 and b.ndim == 3:
        if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
            raise ShapeError(f"matmul: batched dims {a.shape} x {b.shape}")
        A, B = a.data, b.data
        return _make(
            A @ B, (a, b),
            lambda g: (g @ B.transpose(0, 2, 1), A.transpose(0, 2, 1) @ g),
            "bmatmul",
        )
    raise ShapeError(f"matmul needs two 2-D or two 3-D tensors, got {a.shape}, {b.shape}")


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    data = x.data.reshape(shape)
    return _make(data, (x,), lambda g: (g.reshape(old),), "reshape")


def take(x: Tensor, index) -> Tensor:
    """Rows of ``x`` selected along axis 0 (indices may repeat)."""
    idx = np.asarray(index, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise IndexError("take: index out of range")
    shape = x.shape

    def back(g):
        out = np.zeros(shape, dtype=DTYPE)
        np.add.at(out, idx, g)
        return (out,)

    return _make(x.data[idx], (x,), back, "take")


def pick(x: Tensor, cols) -> Tensor:
    """``out[i] = x[i, cols[i]]`` for a 2-D ``x``."""
    cols = np.asarray(cols, dtype=np.intp)
    if x.ndim != 2 or cols.shape != (x.shape[0],):
        raise ShapeError(f"pick: need [B, k] and B indices, got {x.shape}, {cols.shape}")
    rows = np.arange(x.shape[0])
    shape = x.shape

    def back(g):
        out = np.zeros(shape, dtype=DTYPE)
        out[rows, cols] = g
        return (out,)

    return _make(x.data[rows, cols], (x,), back, "pick")


# --------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "mul")
    A, B = a.data, b.data
    return _make(A * B, (a, b), lambda g: (g * B, g * A), "mul")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(x.data * c, (x,), lambda g: (g * c,), "scale")


def add_scalar(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(x.data + c, (x,), lambda g: (g,), "add_scalar")


def square(x: Tensor) -> Tensor:
    X = x.data
    return _make(X * X, (x,), lambda g: (2.0 * X * g,), "square")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def signed_sqrt(x: Tensor) -> Tensor:
    """sign(x) * sqrt(|x|); the derivative at exactly 0 is taken as 0."""
    X = x.data
    root = np.sqrt(np.abs(X))
    out = np.sign(X) * root
    nz = root > 0

    def back(g):
        d = np.zeros_like(X)
        d[nz] = 0.5 / root[nz]
        return (g * d,)

    return _make(out, (x,), back, "signed_sqrt")


def log(x: Tensor, floor: float | None = None) -> Tensor:
    """Natural log; values below ``floor`` are clamped (zero gradient there)."""
    X = x.data
    if floor is None:
        if (X <= 0).any():
            raise NonFiniteError("log of a non-positive value")
        return _make(np.log(X), (x,), lambda g: (g / X,), "log")
    keep = X >= floor
    Xc = np.where(keep, X, floor)
    return _make(np.log(Xc), (x,), lambda g: (np.where(keep, g / Xc, 0.0),), "log")


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    shape = x.shape
    if axis is None:
        return _make(np.asarray(x.data.sum()), (x,),
                     lambda g: (np.broadcast_to(g, shape).copy(),), "sum")
    ax = axis % x.ndim
    return _make(x.data.sum(axis=ax), (x,),
                 lambda g: (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),), "sum")


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return scale(sum(x, axis), 1.0 / n)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """x[B, n] + bias[n] row-wise."""
    if x.ndim != 2 or bias.shape != (x.shape[1],):
        raise ShapeError(f"add_bias: {x.shape} and {bias.shape}")
    return _make(x.data + bias.data, (x, bias), lambda g: (g, g.sum(axis=0)), "add_bias")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return _make(s, (x,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),), "softmax")


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """x / max(||x||_2, eps) along ``axis``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    X = x.data
    norm = np.sqrt((X * X).sum(axis=axis, keepdims=True))
    denom = np.maximum(norm, eps)
    y = X / denom
    above = norm > eps

    def back(g):
        proj = (g * y).sum(axis=axis, keepdims=True)
        return (np.where(above, (g - y * proj) / denom, g / denom),)

    return _make(y, (x,), back, "l2_normalize")


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate == 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep) / keep
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


# --------------------------------------------------------------------------
# convolution and pooling


def _batched(x: Tensor) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x.data[None], True
    if x.ndim == 4:
        return x.data, False
    raise ShapeError(f"expected [C, H, W] or [B, C, H, W], got {x.shape}")


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, padding: int = 0,
           bias: Tensor | None = None) -> Tensor:
    """Plain cross-correlation. ``x`` is [C, H, W] or [B, C, H, W]."""
    X, single = _batched(x)
    W = kernels.data
    if kernels.ndim != 4 or W.shape[1] != X.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} vs kernels {kernels.shape}")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    B, C, H, Wd = X.shape
    O, _, kh, kw = W.shape
    Hp, Wp = H + 2 * padding, Wd + 2 * padding
    if kh > Hp or kw > Wp:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    if bias is not None and bias.shape != (O,):
        raise ShapeError(f"conv2d: bias shape {bias.shape}, expected ({O},)")
    Xp = np.pad(X, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else X
    win = sliding_window_view(Xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    Ho, Wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    Wm = W.reshape(O, -1)
    out = (cols @ Wm.T).reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def back(g):
        g = g[None] if single else g
        gm = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
        dW = (gm.T @ cols).reshape(W.shape)
        dcols = (gm @ Wm).reshape(B, Ho, Wo, C, kh, kw)
        dXp = np.zeros_like(Xp)
        for i in range(kh):
            for j in range(kw):
                dXp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += \
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        dX = dXp[:, :, padding:padding + H, padding:padding + Wd] if padding else dXp
        if single:
            dX = dX[0]
        grads = [dX, dW]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    inputs = (x, kernels) if bias is None else (x, kernels, bias)
    return _make(out[0] if single else out, inputs, back, "conv2d")


def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling; trailing rows/cols that do not fill a window are dropped."""
    X, single = _batched(x)
    B, C, H, W = X.shape
    Ho, Wo = H // size, W // size
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"max_pool2d: window {size} larger than input {H}x{W}")
    crop = X[:, :, :Ho * size, :Wo * size]
    win = crop.reshape(B, C, Ho, size, Wo, size).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho, Wo, size * size)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def back(g):
        g = g[None] if single else g
        dwin = np.zeros_like(win)
        np.put_along_axis(dwin, arg[..., None], g[..., None], axis=-1)
        dcrop = dwin.reshape(B, C, Ho, Wo, size, size).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho * size, Wo * size)
        dX = np.zeros_like(X)
        dX[:, :, :Ho * size, :Wo * size] = dcrop
        return (dX[0] if single else dX,)

    return _make(out[0] if single else out, (x,), back, "max_pool2d")


def global_avg_pool(x: Tensor) -> Tensor:
    """[C, H, W] -> [C] or [B, C, H, W] -> [B, C]."""
    X, single = _batched(x)
    B, C, H, W = X.shape
    out = X.mean(axis=(2, 3))
    n = H * W

    def back(g):
        g = g[None] if single else g
        dX = np.broadcast_to(g[:, :, None, None] / n, X.shape).copy()
        return (dX[0] if single else dX,)

    return _make(out[0] if single else out, (x,), back, "global_avg_pool")


def global_norm(grads: Iterable[np.ndarray]) -> float:
    return float(np.sqrt(np.sum([np.sum(g * g) for g in grads])))
