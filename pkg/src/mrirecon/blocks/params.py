"""Flat, named store of trainable tensors plus the shared conv helpers."""

from __future__ import annotations

import math

import numpy as np

from .. import engine as E
from ..engine import ConvSpec, Tensor


class ParamStore:
    """Ordered map from parameter path to Tensor.

    Creation order is deterministic, and every tensor is drawn from one seeded
    generator, so identical (spec, seed) pairs give bitwise identical stores.
    ``init_log`` records (name, shape, scheme) for every created tensor.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        self.init_log: list[tuple[str, tuple, str]] = []

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self.params[name]
        except KeyError:
            raise KeyError(f"parameter {name!r} not in store") from None

    def __len__(self):
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def tensors(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(t.size for t in self.params.values())

    def add(self, name: str, value: np.ndarray, scheme: str = "given") -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.asarray(value, dtype=np.float32), requires_grad=True, name=name)
        self.params[name] = t
        self.init_log.append((name, t.shape, scheme))
        return t

    def conv(self, name: str, cin: int, cout: int, k: int, *, bias: bool = True,
             gain: float = math.sqrt(2.0), scale: float = 1.0, zero: bool = False) -> None:
        """Create ``name.w`` (Kaiming fan-in normal, times ``scale``) and ``name.b`` (zeros)."""
        shape = (cout, cin, k, k)
        if zero:
            w = np.zeros(shape)
            scheme = "zeros"
        else:
            std = gain / math.sqrt(cin * k * k)
            w = self._rng.standard_normal(shape) * std * scale
            scheme = f"kaiming(gain={gain:.4g},scale={scale:g})"
        self.add(f"{name}.w", w, scheme)
        if bias:
            self.add(f"{name}.b", np.zeros(cout), "zeros")

    def set_requires_grad(self, flag: bool) -> None:
        for t in self.params.values():
            t.requires_grad = flag

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        if strict:
            missing = set(self.params) - set(state)
            extra = set(state) - set(self.params)
            if missing or extra:
                raise KeyError(f"state mismatch: missing={sorted(missing)[:5]} extra={sorted(extra)[:5]}")
        for k, v in state.items():
            if k not in self.params:
                continue
            if v.shape != self.params[k].shape:
                raise ValueError(f"{k}: stored shape {v.shape} != expected {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float32)

    def clone(self) -> "ParamStore":
        other = ParamStore(self.seed)
        for k, v in self.params.items():
            other.params[k] = Tensor(v.data.copy(), requires_grad=True, name=k)
        other.init_log = list(self.init_log)
        return other


def conv(x: Tensor, p: ParamStore, name: str, *, stride: int = 1, padding: int | None = None,
         dilation: int = 1) -> Tensor:
    """Apply the conv layer stored under ``name``; default padding keeps size at stride 1."""
    w = p[f"{name}.w"]
    b = p.params.get(f"{name}.b")
    cout, cin, k, _ = w.shape
    if padding is None:
        padding = dilation * (k - 1) // 2
    spec = ConvSpec(cin, cout, k, stride=stride, padding=padding, dilation=dilation)
    return E.conv2d(x, w, b, spec)


def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    mu = E.reduce_mean(x, axis=(2, 3), keepdims=True)
    xc = E.sub(x, mu)
    var = E.reduce_mean(E.square(xc), axis=(2, 3), keepdims=True)
    return E.div(xc, E.sqrt(E.add(var, eps)))
