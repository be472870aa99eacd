"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Everything runs on 64-bit floats and a dynamic tape: operations append a
record (inputs, output, local gradient rule) to the innermost active Tape,
and `grad` replays the records in exact reverse creation order, which makes
gradients deterministic for a fixed sequence of operations.

Tensors are immutable values (the wrapped numpy buffer is marked read-only)
and safe to share; a Tape is single-owner and must not be shared across
concurrent tasks.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

LAYER_NORM_EPS = 1e-5

_TAPE_STACK: list["Tape"] = []


class Tensor:
    """An immutable dense tensor of 64-bit floats, row-major."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64, order="C")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Internal fast path for freshly computed arrays we own.
        # asarray keeps 0-d results 0-d (ascontiguousarray would rank-promote).
        t = object.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(t, "data", arr)
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __float__(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    # arithmetic ------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    @property
    def T(self):
        return transpose(self, None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    """Wrap arrays / scalars as constant Tensors; pass Tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


class Tape:
    """Records operations in creation order for reverse-mode differentiation.

    Use as a context manager; ops executed inside record themselves on the
    innermost active tape. Leaf tensors whose gradients are wanted must be
    `watch`ed (participating in a recorded op also registers a tensor).
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple, Callable]] = []
        # id -> Tensor; holds strong references so no recorded tensor can be
        # garbage-collected while the tape lives (a freed id could be reused
        # by a new Tensor and silently cross-wire gradient routing)
        self._known: dict[int, Tensor] = {}

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def watch(self, *tensors: Tensor) -> None:
        for t in tensors:
            if not isinstance(t, Tensor):
                raise TypeError("can only watch Tensors")
            self._known[id(t)] = t

    def _record(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable) -> None:
        self._nodes.append((out, tuple(inputs), backward))
        self._known[id(out)] = out
        for t in inputs:
            self._known[id(t)] = t

    def __len__(self) -> int:
        return len(self._nodes)


def _record(out: Tensor, inputs: Sequence[Tensor], backward: Callable) -> None:
    # Every open tape sees the op, so an outer tape never misses work done
    # while an inner tape was active.
    for tape in _TAPE_STACK:
        tape._record(out, inputs, backward)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def grad(tape: Tape, output: Tensor, inputs: Sequence[Tensor]) -> list[Tensor]:
    """d(output)/d(input) for each input, via reverse replay of `tape`.

    `output` must be scalar (size 1) and every input must have been watched
    on or produced by the tape. Inputs the output does not depend on get
    zero gradients.
    """
    if output.size != 1:
        raise ValueError(f"grad requires a scalar output, got shape {output.shape}")
    for i, t in enumerate(inputs):
        if id(t) not in tape._known:
            raise ValueError(f"input {i} was not recorded on the tape")

    grads: dict[int, np.ndarray] = {id(output): np.ones(output.shape)}
    for out_t, node_inputs, backward in reversed(tape._nodes):
        g = grads.get(id(out_t))
        if g is None:
            continue
        for t, gi in zip(node_inputs, backward(g)):
            if gi is None:
                continue
            acc = grads.get(id(t))
            if acc is None:
                grads[id(t)] = gi
            else:
                grads[id(t)] = acc + gi
    out = []
    for t in inputs:
        g = grads.get(id(t))
        out.append(Tensor._wrap(g.copy() if g is not None else np.zeros(t.shape)))
    return out


# elementwise and reduction primitives --------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor._wrap(a.data + b.data)
    _record(out, (a, b), lambda g, sa=a.shape, sb=b.shape: (
        _unbroadcast(g, sa), _unbroadcast(g, sb)))
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor._wrap(a.data - b.data)
    _record(out, (a, b), lambda g, sa=a.shape, sb=b.shape: (
        _unbroadcast(g, sa), _unbroadcast(-g, sb)))
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor._wrap(a.data * b.data)
    _record(out, (a, b), lambda g, ad=a.data, bd=b.data: (
        _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))
    return out


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor._wrap(a.data / b.data)
    _record(out, (a, b), lambda g, ad=a.data, bd=b.data: (
        _unbroadcast(g / bd, ad.shape),
        _unbroadcast(-g * ad / (bd * bd), bd.shape)))
    return out


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor._wrap(-a.data)
    _record(out, (a,), lambda g: (-g,))
    return out


def texp(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor._wrap(np.exp(a.data))
    _record(out, (a,), lambda g, od=out.data: (g * od,))
    return out


def tlog(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor._wrap(np.log(a.data))
    _record(out, (a,), lambda g, ad=a.data: (g / ad,))
    return out


def tsqrt(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor._wrap(np.sqrt(a.data))
    _record(out, (a,), lambda g, od=out.data: (g * 0.5 / od,))
    return out


def tabs(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor._wrap(np.abs(a.data))
    _record(out, (a,), lambda g, ad=a.data: (g * np.sign(ad),))
    return out


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor._wrap(np.tanh(a.data))
    _record(out, (a,), lambda g, od=out.data: (g * (1.0 - od * od),))
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Stable in both tails.
    pos = x >= 0
    z = np.empty_like(x)
    z[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    z[~pos] = ex / (1.0 + ex)
    return z


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor._wrap(_sigmoid(np.asarray(a.data)))
    _record(out, (a,), lambda g, od=out.data: (g * od * (1.0 - od),))
    return out


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor._wrap(np.logaddexp(0.0, a.data))
    _record(out, (a,), lambda g, ad=a.data: (g * _sigmoid(np.asarray(ad)),))
    return out


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = Tensor._wrap(np.sum(a.data, axis=axis, keepdims=keepdims))

    def backward(g, shape=a.shape, axis=axis, keepdims=keepdims):
        if axis is not None and not keepdims:
            ax = axis if isinstance(axis, tuple) else (axis,)
            ax = tuple(i % len(shape) for i in ax)
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, shape),)

    _record(out, (a,), backward)
    return out


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for i in ax:
            count *= a.shape[i]
    return div(tsum(a, axis=axis, keepdims=keepdims), float(count))


# shape manipulation ---------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor._wrap(a.data.reshape(shape))
    _record(out, (a,), lambda g, s=a.shape: (g.reshape(s),))
    return out


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = Tensor._wrap(np.transpose(a.data, axes))
    if axes is None:
        inv = None
    else:
        inv = tuple(np.argsort(axes))
    _record(out, (a,), lambda g, inv=inv: (np.transpose(g, inv),))
    return out


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    out = Tensor._wrap(a.data[idx].copy())

    def backward(g, shape=a.shape, idx=idx):
        full = np.zeros(shape)
        full[idx] = g
        return (full,)

    _record(out, (a,), backward)
    return out


def concat(parts: Iterable, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = Tensor._wrap(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]
    _record(out, tuple(parts), lambda g, splits=tuple(splits), axis=axis: tuple(
        np.split(g, splits, axis=axis)))
    return out


def matmul(a, b) -> Tensor:
    """np.matmul semantics on the last two axes; leading axes broadcast.

    1-D operands follow numpy's promotion rule (prepend/append a unit axis,
    squeeze it from the result); the backward pass restores those axes.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ValueError("matmul requires rank >= 1 operands")
    a1, b1 = a.ndim == 1, b.ndim == 1
    out = Tensor._wrap(np.matmul(a.data, b.data))

    def backward(g, ad=a.data, bd=b.data, a1=a1, b1=b1):
        ad2 = ad[None, :] if a1 else ad
        bd2 = bd[:, None] if b1 else bd
        g2 = g
        if b1:
            g2 = np.expand_dims(g2, -1)
        if a1:
            g2 = np.expand_dims(g2, -2)
        ga = _unbroadcast(np.matmul(g2, np.swapaxes(bd2, -1, -2)), ad2.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(ad2, -1, -2), g2), bd2.shape)
        return (ga.reshape(ad.shape) if a1 else ga,
                gb.reshape(bd.shape) if b1 else gb)

    _record(out, (a, b), backward)
    return out


# composites -----------------------------------------------------------------


def softmax(x, axis: int = -1) -> Tensor:
    """Row-stable softmax; the subtracted max is treated as a constant."""
    x = as_tensor(x)
    m = np.max(x.data, axis=axis, keepdims=True)
    e = texp(sub(x, m))
    return div(e, tsum(e, axis=axis, keepdims=True))


def gelu(x) -> Tensor:
    """tanh-approximation GELU (smooth everywhere, gradient-check friendly)."""
    x = as_tensor(x)
    c = math.sqrt(2.0 / math.pi)
    inner = mul(mul(x, mul(x, x)), 0.044715)
    t = tanh(mul(add(x, inner), c))
    return mul(mul(x, 0.5), add(t, 1.0))


def layer_norm(x, gain, bias, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError(
            f"gain/bias must have shape ({d},), got {gain.shape} and {bias.shape}")
    mu = tmean(x, axis=-1, keepdims=True)
    xc = sub(x, mu)
    var = tmean(mul(xc, xc), axis=-1, keepdims=True)
    y = div(xc, tsqrt(add(var, eps)))
    return add(mul(y, gain), bias)


def attention(q, k, v) -> Tensor:
    """softmax(Q·Kᵀ/√d)·V with stable softmax.

    Q: [..., n_q, d], K: [..., n_k, d], V: [..., n_k, d_v]; every attention
    row sums to 1, so each output row is a convex combination of V rows.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"Q/K feature dims differ: {q.shape[-1]} vs {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ValueError(f"K/V row counts differ: {k.shape[-2]} vs {v.shape[-2]}")
    d = q.shape[-1]
    if d <= 0:
        raise ValueError("feature dimension must be positive")
    scores = div(matmul(q, transpose(k, _swap_last(k.ndim))), math.sqrt(d))
    return matmul(softmax(scores, axis=-1), v)


def _swap_last(ndim: int) -> tuple:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)
