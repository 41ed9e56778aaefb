"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, backward, precision, tape


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-3, *,
               wide: bool = False, max_coords: int | None = None, seed: int = 0,
               coords=None) -> float:
    """Max relative error between the analytic gradient and central differences.

    ``f`` maps ``x`` to a scalar tensor. ``x`` may be a tensor owned by some
    parameter store: its data is perturbed in place and restored afterwards.
    With ``wide=True`` the data is promoted to float64 for the duration of the
    check, so constants created inside ``f`` are float64 too.

    The error is ``max|analytic - numeric| / max(max|numeric|, max|analytic|)``
    over the probed coordinates (a scale-aware infinity-norm ratio).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    original = x.data
    dtype = np.float64 if wide else original.dtype
    work = original.astype(dtype, copy=True)
    x.data = work
    was = x.requires_grad
    x.requires_grad = True
    try:
        with precision(dtype), tape():
            x.grad = None
            loss = f(x)
            backward(loss)
            analytic = np.zeros_like(work) if x.grad is None else np.array(x.grad, dtype=np.float64)

        flat = work.reshape(-1)
        if coords is None:
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = np.random.default_rng(seed).choice(flat.size, max_coords, replace=False)
        numeric = np.empty(len(coords))
        with precision(dtype), tape():
            for n, i in enumerate(coords):
                keep = flat[i]
                flat[i] = keep + eps
                fp = float(np.sum(f(x).data, dtype=np.float64))
                flat[i] = keep - eps
                fm = float(np.sum(f(x).data, dtype=np.float64))
                flat[i] = keep
                numeric[n] = (fp - fm) / (2 * eps)
    finally:
        x.data = original
        x.requires_grad = was
        x.grad = None

    got = analytic.reshape(-1)[np.asarray(coords)]
    scale = max(np.max(np.abs(numeric)), np.max(np.abs(got)), 1e-30)
    return float(np.max(np.abs(got - numeric)) / scale)
