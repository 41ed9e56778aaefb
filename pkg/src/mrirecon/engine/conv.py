"""Convolution and pooling primitives (NCHW layout).

Convolutions use an im2col built from ``k*k`` strided slice copies followed by
one batched matmul; the padded input is saved for backward and the columns are
rebuilt there, which keeps tape memory proportional to activations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, apply


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1
    padding: int = 0
    dilation: int = 1

    def __post_init__(self):
        for field in ("in_channels", "out_channels", "kernel_size", "stride", "dilation"):
            if getattr(self, field) < 1:
                raise ValueError(f"ConvSpec.{field} must be >= 1, got {getattr(self, field)}")
        if self.padding < 0:
            raise ValueError(f"ConvSpec.padding must be >= 0, got {self.padding}")

    def output_size(self, n: int) -> int:
        out = (n + 2 * self.padding - self.dilation * (self.kernel_size - 1) - 1) // self.stride + 1
        if out < 1:
            raise ValueError(f"conv output size {out} < 1 for input {n} with {self}")
        return out

    def transpose_output_size(self, n: int) -> int:
        out = (n - 1) * self.stride - 2 * self.padding + self.dilation * (self.kernel_size - 1) + 1
        if out < 1:
            raise ValueError(f"transpose conv output size {out} < 1 for input {n} with {self}")
        return out


def _im2col(xp: np.ndarray, k: int, stride: int, dilation: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, k, k, ho, wo), dtype=xp.dtype)
    span_h = stride * (ho - 1) + 1
    span_w = stride * (wo - 1) + 1
    for i in range(k):
        for j in range(k):
            r, q = i * dilation, j * dilation
            cols[:, :, i, j] = xp[:, :, r:r + span_h:stride, q:q + span_w:stride]
    return cols.reshape(n, c * k * k, ho * wo)


def _col2im(cols: np.ndarray, shape_padded: tuple, k: int, stride: int, dilation: int,
            ho: int, wo: int) -> np.ndarray:
    n, c = shape_padded[:2]
    cols = cols.reshape(n, c, k, k, ho, wo)
    xp = np.zeros(shape_padded, dtype=cols.dtype)
    span_h = stride * (ho - 1) + 1
    span_w = stride * (wo - 1) + 1
    for i in range(k):
        for j in range(k):
            r, q = i * dilation, j * dilation
            xp[:, :, r:r + span_h:stride, q:q + span_w:stride] += cols[:, :, i, j]
    return xp


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _unpad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return x[:, :, p:-p, p:-p]


def _check(x: Tensor, w: Tensor, spec: ConvSpec) -> None:
    if x.ndim != 4:
        raise ValueError(f"conv: expected NCHW input, got shape {x.shape}")
    k = spec.kernel_size
    expected = (spec.out_channels, spec.in_channels, k, k)
    if w.shape != expected:
        raise ValueError(f"conv: weight shape {w.shape} does not match spec {expected}")
    if x.shape[1] != spec.in_channels:
        raise ValueError(f"conv: input has {x.shape[1]} channels, spec expects {spec.in_channels}")


def _batched_weight_grad(g: np.ndarray, cols: np.ndarray) -> np.ndarray:
    # sum_b g[b] @ cols[b].T ; a python loop over the batch beats einsum here
    acc = g[0] @ cols[0].T
    for b in range(1, g.shape[0]):
        acc += g[b] @ cols[b].T
    return acc


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, spec: ConvSpec) -> Tensor:
    """Cross-correlation with stride, zero padding and dilation.

    ``w`` has shape (out, in, k, k); ``b`` has shape (out,) or is None.
    """
    _check(x, w, spec)
    n, c, h, wd = x.shape
    k, s, d, p = spec.kernel_size, spec.stride, spec.dilation, spec.padding
    ho, wo = spec.output_size(h), spec.output_size(wd)
    xp = _pad(x.data, p)
    cols = _im2col(xp, k, s, d, ho, wo)
    wmat = w.data.reshape(spec.out_channels, -1)
    out = np.matmul(wmat, cols)
    if b is not None:
        out += b.data.reshape(1, -1, 1)
    out = out.reshape(n, spec.out_channels, ho, wo)
    padded_shape = xp.shape
    del cols

    def grad(g):
        g2 = g.reshape(n, spec.out_channels, ho * wo)
        gx = gw = gb = None
        if w.requires_grad:
            cols_ = _im2col(xp, k, s, d, ho, wo)
            gw = _batched_weight_grad(g2, cols_).reshape(w.shape)
        if x.requires_grad:
            if s == 1 and p <= d * (k - 1):
                # stride 1: input gradient is a full correlation of g with the
                # flipped, channel-swapped kernel (cheaper than col2im when out < in)
                q = d * (k - 1) - p
                gcols = _im2col(_pad(g, q), k, 1, d, h, wd)
                wflip = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c, -1)
                gx = np.matmul(wflip, gcols).reshape(n, c, h, wd)
            else:
                dcols = np.matmul(wmat.T, g2)
                gx = _unpad(_col2im(dcols, padded_shape, k, s, d, ho, wo), p)
        if b is not None and b.requires_grad:
            gb = g2.sum(axis=(0, 2))
        return gx, gw, gb

    inputs = (x, w, b) if b is not None else (x, w)
    return apply("conv2d", inputs, out, grad)


def conv2d_transpose(x: Tensor, w: Tensor, b: Tensor | None, spec: ConvSpec) -> Tensor:
    """Adjoint of :func:`conv2d` with the same weight.

    ``w`` keeps the conv2d layout (C_conv_out, C_conv_in, k, k), so this maps
    ``w.shape[0]`` channels to ``w.shape[1]``; ``spec`` describes the forward
    conv it is the adjoint of (in_channels = w.shape[1]).
    """
    if x.ndim != 4:
        raise ValueError(f"conv2d_transpose: expected NCHW input, got shape {x.shape}")
    k, s, d, p = spec.kernel_size, spec.stride, spec.dilation, spec.padding
    if w.shape != (spec.out_channels, spec.in_channels, k, k):
        raise ValueError(f"conv2d_transpose: weight shape {w.shape} does not match spec")
    if x.shape[1] != spec.out_channels:
        raise ValueError(f"conv2d_transpose: input has {x.shape[1]} channels, expected {spec.out_channels}")
    n, _, hi, wi = x.shape
    ho, wo = spec.transpose_output_size(hi), spec.transpose_output_size(wi)
    # the forward conv of an (ho, wo) input must give back (hi, wi)
    if spec.output_size(ho) != hi or spec.output_size(wo) != wi:
        raise ValueError(f"conv2d_transpose: spec {spec} is not invertible for input {hi}x{wi}")
    padded_shape = (n, spec.in_channels, ho + 2 * p, wo + 2 * p)
    wmat = w.data.reshape(spec.out_channels, -1)
    xr = x.data.reshape(n, spec.out_channels, hi * wi)
    out = _unpad(_col2im(np.matmul(wmat.T, xr), padded_shape, k, s, d, hi, wi), p)
    out = np.ascontiguousarray(out)
    if b is not None:
        out += b.data.reshape(1, -1, 1, 1)

    def grad(g):
        gx = gw = gb = None
        need_cols = x.requires_grad or w.requires_grad
        cols = _im2col(_pad(g, p), k, s, d, hi, wi) if need_cols else None
        if x.requires_grad:
            gx = np.matmul(wmat, cols).reshape(x.shape)
        if w.requires_grad:
            gw = _batched_weight_grad(xr, cols).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    inputs = (x, w, b) if b is not None else (x, w)
    return apply("conv2d_transpose", inputs, out, grad)


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------

def _pool_dims(x: Tensor, k: int, stride: int) -> tuple:
    if x.ndim != 4:
        raise ValueError(f"pool: expected NCHW input, got shape {x.shape}")
    h, w = x.shape[2:]
    if k > h or k > w:
        raise ValueError(f"pool: kernel {k} larger than input {h}x{w}")
    return (h - k) // stride + 1, (w - k) // stride + 1


def max_pool2d(x: Tensor, k: int, stride: int | None = None) -> Tensor:
    """Max pooling with floor semantics; ties go to the first entry in row-major order."""
    stride = stride or k
    ho, wo = _pool_dims(x, k, stride)
    n, c = x.shape[:2]
    cols = _im2col(x.data, k, stride, 1, ho, wo).reshape(n, c, k * k, ho * wo)
    idx = np.argmax(cols, axis=2)
    out = np.take_along_axis(cols, idx[:, :, None, :], axis=2).reshape(n, c, ho, wo)
    shape = x.shape

    def grad(g):
        dcols = np.zeros((n, c, k * k, ho * wo), dtype=g.dtype)
        np.put_along_axis(dcols, idx[:, :, None, :], g.reshape(n, c, 1, ho * wo), axis=2)
        return (_col2im(dcols.reshape(n, c * k * k, ho * wo), shape, k, stride, 1, ho, wo),)

    return apply("max_pool2d", (x,), out, grad)


def avg_pool2d(x: Tensor, k: int, stride: int | None = None) -> Tensor:
    stride = stride or k
    ho, wo = _pool_dims(x, k, stride)
    n, c, h, w = x.shape
    if stride == k and h % k == 0 and w % k == 0:
        out = x.data.reshape(n, c, ho, k, wo, k).mean(axis=(3, 5))

        def grad(g):
            g = g / (k * k)
            return (np.repeat(np.repeat(g, k, axis=2), k, axis=3),)

        return apply("avg_pool2d", (x,), out, grad)

    cols = _im2col(x.data, k, stride, 1, ho, wo).reshape(n, c, k * k, ho * wo)
    out = cols.mean(axis=2).reshape(n, c, ho, wo)
    shape = x.shape

    def grad_general(g):
        dcols = np.broadcast_to(g.reshape(n, c, 1, ho * wo) / (k * k), (n, c, k * k, ho * wo))
        return (_col2im(np.ascontiguousarray(dcols).reshape(n, c * k * k, ho * wo),
                        shape, k, stride, 1, ho, wo),)

    return apply("avg_pool2d", (x,), out, grad_general)


def global_avg_pool(x: Tensor) -> Tensor:
    from .ops import reduce_mean
    return reduce_mean(x, axis=(2, 3), keepdims=True)


def global_max_pool(x: Tensor) -> Tensor:
    from .ops import reduce_max, reshape
    n, c, h, w = x.shape
    return reshape(reduce_max(reshape(x, (n, c, h * w)), axis=2, keepdims=True), (n, c, 1, 1))
