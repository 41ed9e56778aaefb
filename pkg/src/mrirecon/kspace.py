"""Fourier-domain forward model.

Images and k-space are N x 2 x H x W tensors (real, imaginary). The 2-D DFT is
orthonormal and DC-centred: ``fft2 = shift(F(x)) / sqrt(HW)``. The transforms
are built on an in-house iterative radix-2 FFT, so H and W must be powers of two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import engine as E
from .engine import Tensor


# ---------------------------------------------------------------------------
# radix-2 FFT on numpy complex arrays
# ---------------------------------------------------------------------------

def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@lru_cache(maxsize=None)
def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=None)
def _twiddles(m: int, inverse: bool) -> np.ndarray:
    sign = 1.0 if inverse else -1.0
    return np.exp(sign * 2j * np.pi * np.arange(m) / (2 * m))


def fft_last_axis(a: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Unnormalised radix-2 DFT along the last axis (decimation in time)."""
    n = a.shape[-1]
    if not is_power_of_two(n):
        raise ValueError(f"FFT length must be a power of two, got {n}")
    lead = a.shape[:-1]
    out = a[..., _bit_reverse(n)]
    m = 1
    while m < n:
        w = _twiddles(m, inverse).astype(out.dtype)
        blocks = out.reshape(lead + (n // (2 * m), 2, m))
        even = blocks[..., 0, :]
        odd = blocks[..., 1, :] * w
        out = np.stack((even + odd, even - odd), axis=-2).reshape(lead + (n,))
        m *= 2
    return out


def _shift(a: np.ndarray) -> np.ndarray:
    # quadrant swap; an involution for even sizes
    h, w = a.shape[-2:]
    return np.roll(a, (h // 2, w // 2), axis=(-2, -1))


def _complex_dtype(real_dtype):
    return np.complex128 if np.dtype(real_dtype) == np.float64 else np.complex64


def _to_complex(x: np.ndarray) -> np.ndarray:
    c = np.empty(x.shape[:1] + x.shape[2:], dtype=_complex_dtype(x.dtype))
    c.real = x[:, 0]
    c.imag = x[:, 1]
    return c


def _to_channels(c: np.ndarray, dtype) -> np.ndarray:
    return np.stack((c.real, c.imag), axis=1).astype(dtype, copy=False)


def fft2c(c: np.ndarray) -> np.ndarray:
    """Orthonormal, DC-centred 2-D DFT of a complex array (last two axes)."""
    h, w = c.shape[-2:]
    k = fft_last_axis(c)
    k = np.swapaxes(fft_last_axis(np.swapaxes(k, -1, -2)), -1, -2)
    return _shift(k) / math.sqrt(h * w)


def ifft2c(k: np.ndarray) -> np.ndarray:
    h, w = k.shape[-2:]
    c = fft_last_axis(_shift(k), inverse=True)
    c = np.swapaxes(fft_last_axis(np.swapaxes(c, -1, -2), inverse=True), -1, -2)
    return c / math.sqrt(h * w)


def _check_complex_image(x: Tensor, what: str) -> None:
    if x.ndim != 4 or x.shape[1] != 2:
        raise ValueError(f"{what}: expected N x 2 x H x W, got {x.shape}")
    h, w = x.shape[2:]
    if not (is_power_of_two(h) and is_power_of_two(w)):
        raise ValueError(f"{what}: H and W must be powers of two, got {h}x{w}")


def fft2(img: Tensor) -> Tensor:
    """Image -> centred k-space. Backward applies the adjoint (= inverse) transform."""
    _check_complex_image(img, "fft2")
    dtype = img.dtype
    out = _to_channels(fft2c(_to_complex(img.data)), dtype)
    return E.apply("fft2", (img,), out,
                   lambda g: (_to_channels(ifft2c(_to_complex(g)), g.dtype),))


def ifft2(k: Tensor) -> Tensor:
    _check_complex_image(k, "ifft2")
    dtype = k.dtype
    out = _to_channels(ifft2c(_to_complex(k.data)), dtype)
    return E.apply("ifft2", (k,), out,
                   lambda g: (_to_channels(fft2c(_to_complex(g)), g.dtype),))


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

@dataclass
class SamplingMask:
    """Binary H x W selector of acquired k-space positions (DC at the centre)."""

    mask: np.ndarray
    rate: float
    seed: int
    center_fraction: float = 0.0
    mode: str = "point"

    @property
    def shape(self) -> tuple:
        return self.mask.shape

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    def as_tensor(self) -> Tensor:
        return Tensor(self.mask.reshape((1, 1) + self.mask.shape))


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def make_mask(h: int, w: int, rate: float, center_fraction: float = 0.04, seed: int = 0,
              mode: str = "point") -> SamplingMask:
    """Seeded random mask with exactly ``round(rate*h*w)`` ones.

    The central ``round(center_fraction*h)`` rows are always kept; the rest of
    the budget is drawn uniformly without replacement from the remaining points
    (``mode="point"``) or rows (``mode="line"``).
    """
    if not 0 < rate <= 1:
        raise ValueError(f"rate must be in (0, 1], got {rate}")
    if not 0 <= center_fraction <= 1:
        raise ValueError(f"center_fraction must be in [0, 1], got {center_fraction}")
    if mode not in ("point", "line"):
        raise ValueError(f"unknown mask mode {mode!r}")
    budget = _round_half_up(rate * h * w)
    n_center = _round_half_up(center_fraction * h)
    if n_center * w > budget:
        raise ValueError(f"infeasible mask: {n_center} centre rows need {n_center * w} samples, "
                         f"budget is {budget}")
    m = np.zeros((h, w), dtype=np.float32)
    lo = h // 2 - n_center // 2
    m[lo:lo + n_center] = 1.0
    rng = np.random.default_rng(seed)
    remaining = budget - n_center * w
    if mode == "point":
        free = np.flatnonzero(m.reshape(-1) == 0)
        pick = rng.choice(free, size=remaining, replace=False)
        m.reshape(-1)[pick] = 1.0
    else:
        if remaining % w:
            raise ValueError(f"line mask: budget {budget} is not a whole number of {w}-sample rows")
        free_rows = np.flatnonzero(m[:, 0] == 0)
        m[rng.choice(free_rows, size=remaining // w, replace=False)] = 1.0
    return SamplingMask(m, rate=rate, seed=seed, center_fraction=center_fraction, mode=mode)


def _mask_array(m) -> np.ndarray:
    return m.mask if isinstance(m, SamplingMask) else np.asarray(m)


def undersample(k: Tensor, m: SamplingMask) -> Tensor:
    """y = H(k): zero every unsampled position on both channels."""
    arr = _mask_array(m)
    if k.ndim != 4 or k.shape[2:] != arr.shape:
        raise ValueError(f"undersample: k-space {k.shape} does not match mask {arr.shape}")
    return E.mul(k, Tensor(arr.reshape((1, 1) + arr.shape)))


def forward_model(img: Tensor, m: SamplingMask) -> Tensor:
    return undersample(fft2(img), m)


def zero_filled(y: Tensor) -> Tensor:
    return ifft2(y)


def dc_residual(g: Tensor, y: Tensor, m: SamplingMask) -> Tensor:
    """Mean absolute k-space mismatch over sampled entries (both channels).

    ``|y - m * fft2(g)|`` summed over sampled positions and divided by
    ``N * 2 * count(mask)``.
    """
    arr = _mask_array(m)
    if g.shape != y.shape or g.shape[2:] != arr.shape:
        raise ValueError(f"dc_residual: shapes {g.shape}, {y.shape}, mask {arr.shape} disagree")
    diff = E.sub(y, undersample(fft2(g), m))
    n = g.shape[0] * 2 * float(arr.sum())
    if n == 0:
        raise ValueError("dc_residual: empty mask")
    return E.scale(E.reduce_sum(E.abs(diff)), 1.0 / n)


def magnitude(x: Tensor, eps: float = 1e-12) -> Tensor:
    """N x 1 x H x W magnitude sqrt(re^2 + im^2 + eps); eps keeps sqrt differentiable at 0."""
    sq = E.reduce_sum(E.square(x), axis=1, keepdims=True)
    return E.sqrt(E.add(sq, eps))


def magnitude_np(x: np.ndarray) -> np.ndarray:
    return np.sqrt(x[:, 0:1] ** 2 + x[:, 1:2] ** 2)
