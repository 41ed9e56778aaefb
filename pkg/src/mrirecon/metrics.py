"""Evaluation metrics on magnitude images: PSNR, SSIM, MS-SSIM and KID."""

from __future__ import annotations

import math

import numpy as np

from . import engine as E
from .engine import Tensor
from .losses import ms_ssim, ssim

INFINITE = float("inf")


def magnitude01(x: np.ndarray) -> np.ndarray:
    """N x 2 x H x W (or 2 x H x W) complex channels -> N x 1 x H x W magnitude clipped to [0, 1]."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 3:
        a = a[None]
    return np.clip(np.sqrt(a[:, 0:1] ** 2 + a[:, 1:2] ** 2), 0.0, 1.0)


def psnr(a, b, max_val: float = 1.0) -> float:
    """10*log10(max_val^2 / MSE) in dB; identical inputs give ``INFINITE``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    if max_val <= 0:
        raise ValueError("psnr: max_val must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return INFINITE
    return 10.0 * math.log10(max_val * max_val / mse)


def _wide(fn, a, b, **kw) -> np.ndarray:
    with E.precision(np.float64), E.no_grad():
        ta = Tensor(np.asarray(a, dtype=np.float64))
        tb = Tensor(np.asarray(b, dtype=np.float64))
        return np.asarray(fn(ta, tb, reduce=False, **kw).data, dtype=np.float64)


def ssim_per_sample(a, b, **kw) -> np.ndarray:
    """SSIM of N x 1 x H x W magnitude stacks, one value per sample (float64)."""
    return _wide(ssim, a, b, **kw)


def ms_ssim_per_sample(a, b, **kw) -> np.ndarray:
    return _wide(ms_ssim, a, b, **kw)


def polynomial_kernel(x: np.ndarray, y: np.ndarray, degree: int = 3) -> np.ndarray:
    d = x.shape[1]
    return (x @ y.T / d + 1.0) ** degree


def mmd2_unbiased(x: np.ndarray, y: np.ndarray, degree: int = 3) -> float:
    """Unbiased MMD^2 U-statistic over paired samples.

    ``1/(m(m-1)) * sum_{i != j} k(x_i,x_j) + k(y_i,y_j) - k(x_i,y_j) - k(x_j,y_i)``.
    It is exactly zero when ``x`` and ``y`` are the same sequence.
    """
    m = x.shape[0]
    if y.shape[0] != m or m < 2:
        raise ValueError(f"mmd2_unbiased: need two equal-size sets of >= 2 rows, got {x.shape[0]}, {y.shape[0]}")
    kxx = polynomial_kernel(x, x, degree)
    kyy = polynomial_kernel(y, y, degree)
    kxy = polynomial_kernel(x, y, degree)
    off = ~np.eye(m, dtype=bool)
    total = kxx[off].sum() + kyy[off].sum() - kxy[off].sum() - kxy.T[off].sum()
    return float(total / (m * (m - 1)))


def kid(real_feats, fake_feats, kernel_degree: int = 3, subset_size: int = 50,
        subsets: int = 100, seed: int = 0) -> float:
    """Kernel distance: unbiased polynomial-kernel MMD^2 averaged over seeded subsets.

    Each subset draws the same row indices from both sets (the sets are
    paired sample-by-sample in evaluation). When ``subset_size`` equals the set
    size a single full-set evaluation is returned.
    """
    x = np.asarray(real_feats, dtype=np.float64)
    y = np.asarray(fake_feats, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ValueError(f"kid: feature sets must be 2-D with equal width, got {x.shape}, {y.shape}")
    n = min(len(x), len(y))
    if subset_size < 2 or len(x) < subset_size or len(y) < subset_size:
        raise ValueError(f"kid: sets of {len(x)} and {len(y)} rows too small for subset size {subset_size}")
    if subset_size == len(x) == len(y):
        return mmd2_unbiased(x, y, kernel_degree)
    rng = np.random.default_rng(seed)
    vals = []
    for _ in range(subsets):
        idx = rng.choice(n, subset_size, replace=False)
        vals.append(mmd2_unbiased(x[idx], y[idx], kernel_degree))
    return float(np.mean(vals))
