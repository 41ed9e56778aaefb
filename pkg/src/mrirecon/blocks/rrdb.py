"""Residual-in-residual dense blocks."""

from __future__ import annotations

from .. import engine as E
from ..engine import Tensor
from .params import ParamStore, conv

RESIDUAL_SCALE = 0.2


def init_rrdb(p: ParamStore, name: str, channels: int, growth: int, count: int,
              zero_trunk: bool = False) -> None:
    for r in range(count):
        for d in range(3):
            base = f"{name}.r{r}.d{d}"
            for i in range(4):
                p.conv(f"{base}.c{i}", channels + i * growth, growth, 3, scale=0.1)
            p.conv(f"{base}.c4", channels + 4 * growth, channels, 3, gain=1.0, scale=0.1)
    p.conv(f"{name}.trunk", channels, channels, 3, gain=1.0, scale=0.1, zero=zero_trunk)


def dense_block(x: Tensor, p: ParamStore, name: str) -> Tensor:
    feats = [x]
    for i in range(4):
        inp = feats[0] if i == 0 else E.concat(feats, axis=1)
        feats.append(E.relu(conv(inp, p, f"{name}.c{i}")))
    out = conv(E.concat(feats, axis=1), p, f"{name}.c4")
    return E.add(x, E.scale(out, RESIDUAL_SCALE))


def rrdb_block(x: Tensor, p: ParamStore, name: str) -> Tensor:
    y = x
    for d in range(3):
        y = dense_block(y, p, f"{name}.d{d}")
    return E.add(x, E.scale(y, RESIDUAL_SCALE))


def rrdb_forward(x: Tensor, p: ParamStore, count: int, name: str = "rrdb") -> Tensor:
    """``count`` RRDBs followed by a trunk conv, wrapped in a long skip connection.

    With a zero trunk conv the whole stack is the identity.
    """
    if x.ndim != 4:
        raise ValueError(f"rrdb: expected 4-D input, got {x.shape}")
    y = x
    for r in range(count):
        y = rrdb_block(y, p, f"{name}.r{r}")
    return E.add(x, conv(y, p, f"{name}.trunk"))
