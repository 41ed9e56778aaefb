"""U-net backbone producing the coarse reconstruction and tapped decoder features."""

from __future__ import annotations

from dataclasses import dataclass

from .. import engine as E
from ..engine import Tensor
from .params import ParamStore, conv, instance_norm


@dataclass(frozen=True)
class UNetSpec:
    depth: int = 4
    base_channels: int = 32
    multiplier: int = 2
    in_channels: int = 2
    out_channels: int = 2
    convs_per_level: int = 2
    norm: bool = False
    # output = input + predicted correction
    residual: bool = True

    def __post_init__(self):
        if self.depth < 1 or self.base_channels < 1 or self.multiplier < 1 or self.convs_per_level < 1:
            raise ValueError(f"invalid UNetSpec {self}")
        if self.residual and self.in_channels != self.out_channels:
            raise ValueError("residual U-net needs in_channels == out_channels")

    def channels(self, level: int) -> int:
        return self.base_channels * self.multiplier ** level

    def decoder_channels(self, tap: int) -> int:
        """Channels of decoder stage ``tap`` (0 = coarsest, depth-1 = full resolution)."""
        return self.channels(self.depth - 1 - tap)

    def decoder_factor(self, tap: int) -> int:
        """Upsampling factor from decoder stage ``tap`` back to input resolution."""
        return 2 ** (self.depth - 1 - tap)


def _stage(x: Tensor, p: ParamStore, name: str, n: int, norm: bool) -> Tensor:
    for i in range(n):
        x = conv(x, p, f"{name}.c{i}")
        if norm:
            x = instance_norm(x)
        x = E.relu(x)
    return x


def init_unet(p: ParamStore, spec: UNetSpec, prefix: str = "unet") -> None:
    cin = spec.in_channels
    for lvl in range(spec.depth):
        c = spec.channels(lvl)
        for i in range(spec.convs_per_level):
            p.conv(f"{prefix}.enc{lvl}.c{i}", cin if i == 0 else c, c, 3)
        cin = c
    cb = spec.channels(spec.depth)
    for i in range(spec.convs_per_level):
        p.conv(f"{prefix}.mid.c{i}", cin if i == 0 else cb, cb, 3)
    cin = cb
    for lvl in reversed(range(spec.depth)):
        c = spec.channels(lvl)
        p.conv(f"{prefix}.dec{lvl}.up", cin, c, 3)
        for i in range(spec.convs_per_level):
            p.conv(f"{prefix}.dec{lvl}.c{i}", 2 * c if i == 0 else c, c, 3)
        cin = c
    p.conv(f"{prefix}.out", spec.channels(0), spec.out_channels, 1,
           scale=0.1 if spec.residual else 1.0)


def unet_forward(z: Tensor, p: ParamStore, spec: UNetSpec, tap_levels=(), prefix: str = "unet"):
    """Return ``(coarse, features)``; ``features[i]`` is decoder stage ``tap_levels[i]``."""
    if z.ndim != 4 or z.shape[1] != spec.in_channels:
        raise ValueError(f"unet: expected N x {spec.in_channels} x H x W, got {z.shape}")
    h, w = z.shape[2:]
    div = 2 ** spec.depth
    if h % div or w % div:
        raise ValueError(f"unet: {h}x{w} input not divisible by 2^depth = {div}")
    for t in tap_levels:
        if not 0 <= t < spec.depth:
            raise ValueError(f"unet: tap level {t} outside 0..{spec.depth - 1}")

    skips = []
    x = z
    for lvl in range(spec.depth):
        x = _stage(x, p, f"{prefix}.enc{lvl}", spec.convs_per_level, spec.norm)
        skips.append(x)
        x = E.max_pool2d(x, 2)
    x = _stage(x, p, f"{prefix}.mid", spec.convs_per_level, spec.norm)

    decoded = []
    for lvl in reversed(range(spec.depth)):
        x = E.relu(conv(E.upsample_nearest(x, 2), p, f"{prefix}.dec{lvl}.up"))
        x = E.concat([x, skips[lvl]], axis=1)
        x = _stage(x, p, f"{prefix}.dec{lvl}", spec.convs_per_level, spec.norm)
        decoded.append(x)

    out = conv(x, p, f"{prefix}.out")
    if spec.residual:
        out = E.add(z, out)
    return out, [decoded[t] for t in tap_levels]
