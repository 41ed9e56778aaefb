"""Differentiable primitives over :class:`Tensor`.

Binary elementwise ops accept numpy-style broadcasting or a python scalar on
either side; gradients are summed back to each operand's shape.
"""

from __future__ import annotations

import builtins
import numbers

import numpy as np

from .tensor import Tensor, apply, default_dtype

_pyslice = builtins.slice


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}") from None


def _is_scalar(x) -> bool:
    return isinstance(x, numbers.Number)


def _wrap(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=default_dtype()))


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    if _is_scalar(b):
        return apply("add", (a,), a.data + b, lambda g: (g,))
    if _is_scalar(a):
        return add(b, a)
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return apply("add", (a, b), a.data + b.data,
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    if _is_scalar(b):
        return apply("sub", (a,), a.data - b, lambda g: (g,))
    if _is_scalar(a):
        return apply("sub", (b,), a - b.data, lambda g: (-g,))
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return apply("sub", (a, b), a.data - b.data,
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    if _is_scalar(b):
        return scale(a, b)
    if _is_scalar(a):
        return scale(b, a)
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data

    def grad(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return apply("mul", (a, b), ad * bd, grad)


def scale(a: Tensor, c: float) -> Tensor:
    return apply("scale", (a,), a.data * c, lambda g: (g * c,))


def div(a, b) -> Tensor:
    if _is_scalar(b):
        return scale(a, 1.0 / b)
    if _is_scalar(a):
        bd = b.data
        out = a / bd
        return apply("div", (b,), out, lambda g: (-g * out / bd,))
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def grad(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return apply("div", (a, b), out, grad)


def neg(a: Tensor) -> Tensor:
    return apply("neg", (a,), -a.data, lambda g: (-g,))


def power(a: Tensor, p) -> Tensor:
    """``a ** p``; ``p`` is a python scalar or a tensor exponent."""
    ad = a.data
    if _is_scalar(p):
        out = ad ** p
        return apply("pow", (a,), out, lambda g: (g * p * ad ** (p - 1),))
    p = _wrap(p)
    _check_broadcast(a, p, "pow")
    pd = p.data
    out = ad ** pd

    def grad(g):
        ga = _unbroadcast(g * pd * ad ** (pd - 1), ad.shape) if a.requires_grad else None
        gp = _unbroadcast(g * out * np.log(ad), pd.shape) if p.requires_grad else None
        return ga, gp

    return apply("pow", (a, p), out, grad)


def square(a: Tensor) -> Tensor:
    ad = a.data
    return apply("square", (a,), ad * ad, lambda g: (2.0 * g * ad,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return apply("sqrt", (a,), out, lambda g: (0.5 * g / out,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return apply("exp", (a,), out, lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return apply("log", (a,), np.log(ad), lambda g: (g / ad,))


def abs(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    ad = a.data
    return apply("abs", (a,), np.abs(ad), lambda g: (g * np.sign(ad),))


def clip(a: Tensor, lo=None, hi=None) -> Tensor:
    ad = a.data
    out = np.clip(ad, lo, hi)

    def grad(g):
        keep = np.ones(ad.shape, dtype=bool)
        if lo is not None:
            keep &= ad >= lo
        if hi is not None:
            keep &= ad <= hi
        return (g * keep,)

    return apply("clip", (a,), out, grad)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    ad = a.data
    mask = ad > 0
    return apply("relu", (a,), ad * mask, lambda g: (g * mask,))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    ad = a.data
    factor = np.where(ad > 0, 1.0, slope).astype(ad.dtype)
    return apply("leaky_relu", (a,), ad * factor, lambda g: (g * factor,))


def sigmoid(a: Tensor) -> Tensor:
    ad = a.data
    # split by sign to avoid overflow in exp
    e = np.exp(-np.abs(ad))
    out = np.where(ad >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(ad.dtype)
    return apply("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return apply("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ValueError(f"reshape: cannot view {src} as {tuple(shape)}") from None
    return apply("reshape", (a,), out, lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return apply("transpose", (a,), a.data.transpose(axes), lambda g: (g.transpose(inv),))


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    if not tensors:
        raise ValueError("concat: empty tensor list")
    nd = tensors[0].ndim
    ax = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != ax):
            raise ValueError(f"concat: incompatible shapes {tensors[0].shape} vs {t.shape} on axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in tensors], axis=ax)

    def grad(g):
        res = []
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if not t.requires_grad:
                res.append(None)
                continue
            idx = [_pyslice(None)] * nd
            idx[ax] = _pyslice(lo, hi)
            res.append(g[tuple(idx)])
        return res

    return apply("concat", tensors, out, grad)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


def slice(a: Tensor, idx) -> Tensor:  # noqa: A001
    """Basic (non-fancy) indexing; backward scatters into zeros."""
    if not isinstance(idx, tuple):
        idx = (idx,)
    for i in idx:
        if not isinstance(i, (int, np.integer, type(Ellipsis), type(None), _pyslice)):
            raise TypeError(f"slice: unsupported index {i!r}")
    try:
        out = a.data[idx]
    except IndexError as exc:
        raise ValueError(f"slice: {exc} for shape {a.shape}") from None
    shape, dtype = a.shape, a.dtype

    def grad(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return apply("slice", (a,), out, grad)


def upsample_nearest(a: Tensor, factor: int) -> Tensor:
    """Nearest-neighbour upsampling of an NCHW tensor; backward is a strided block sum."""
    if factor < 1:
        raise ValueError(f"upsample_nearest: factor must be >= 1, got {factor}")
    if factor == 1:
        return a
    n, c, h, w = a.shape
    out = np.repeat(np.repeat(a.data, factor, axis=2), factor, axis=3)

    def grad(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return apply("upsample_nearest", (a,), out, grad)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _norm_axis(axis, nd):
    if axis is None:
        return tuple(range(nd))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % nd for ax in axis)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    shape = a.shape
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def grad(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return apply("reduce_sum", (a,), np.asarray(out, dtype=a.dtype), grad)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return scale(reduce_sum(a, axes, keepdims), 1.0 / count)


def reduce_max(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Max along one axis; the gradient goes to the first maximal entry."""
    ax = axis % a.ndim
    idx = np.argmax(a.data, axis=ax)
    out = np.take_along_axis(a.data, np.expand_dims(idx, ax), axis=ax)
    shape = a.shape

    def grad(g):
        gk = g if keepdims else np.expand_dims(g, ax)
        full = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(full, np.expand_dims(idx, ax), gk, axis=ax)
        return (full,)

    return apply("reduce_max", (a,), out if keepdims else np.squeeze(out, ax), grad)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes (leading axes broadcast)."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def grad(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return apply("matmul", (a, b), ad @ bd, grad)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    ad = a.data
    e = np.exp(ad - ad.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def grad(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return apply("softmax", (a,), out, grad)
