"""Large-field contextual feature integration with shallow U-net branches (LCFI++)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import engine as E
from ..engine import Tensor
from .attention import cbam_forward, init_cbam
from .params import ParamStore, conv


@dataclass(frozen=True)
class LCFIppSpec:
    dilations: tuple = (1, 2, 4, 8)
    channels: int = 8
    unet_depth: int = 1

    def __post_init__(self):
        d = tuple(self.dilations)
        if not d or any(r < 1 for r in d) or any(b <= a for a, b in zip(d, d[1:])):
            raise ValueError(f"LCFI++ dilations must be positive and strictly increasing, got {d}")
        if not 1 <= self.unet_depth <= 2:
            raise ValueError("LCFI++ shallow U-net depth must be 1 or 2")

    @property
    def branch_count(self) -> int:
        return len(self.dilations)


def _init_shallow_unet(p: ParamStore, name: str, cin: int, c: int, depth: int) -> None:
    p.conv(f"{name}.e0", cin, c, 3)
    for lvl in range(1, depth + 1):
        p.conv(f"{name}.e{lvl}", c, c, 3)
    for lvl in reversed(range(depth)):
        p.conv(f"{name}.d{lvl}", 2 * c, c, 3)


def shallow_unet(x: Tensor, p: ParamStore, name: str, depth: int) -> Tensor:
    skips = [E.relu(conv(x, p, f"{name}.e0"))]
    y = skips[0]
    for lvl in range(1, depth + 1):
        y = E.relu(conv(E.avg_pool2d(y, 2), p, f"{name}.e{lvl}"))
        skips.append(y)
    for lvl in reversed(range(depth)):
        y = E.concat([E.upsample_nearest(y, 2), skips[lvl]], axis=1)
        y = E.relu(conv(y, p, f"{name}.d{lvl}"))
    return y


def init_lcfipp(p: ParamStore, name: str, in_channels: int, spec: LCFIppSpec,
                identity_projection: bool = False) -> None:
    c = spec.channels
    for b, _ in enumerate(spec.dilations):
        _init_shallow_unet(p, f"{name}.b{b}.unet", in_channels, c, spec.unet_depth)
        p.conv(f"{name}.b{b}.dil", c, c, 3)
    fused = c * spec.branch_count
    init_cbam(p, f"{name}.cbam", fused)
    if identity_projection:
        if fused != in_channels:
            raise ValueError("identity projection needs branch_count * channels == in_channels")
        p.add(f"{name}.proj.w", np.eye(fused).reshape(fused, fused, 1, 1), "identity")
        p.add(f"{name}.proj.b", np.zeros(fused), "zeros")
    else:
        p.conv(f"{name}.proj", fused, in_channels, 1, gain=1.0)


def lcfipp_forward(x: Tensor, p: ParamStore, spec: LCFIppSpec, name: str = "lcfi") -> Tensor:
    """Parallel (shallow U-net -> dilated conv) branches, CBAM fusion, 1x1 projection."""
    if x.ndim != 4:
        raise ValueError(f"lcfi++: expected 4-D input, got {x.shape}")
    branches = []
    for b, rate in enumerate(spec.dilations):
        y = shallow_unet(x, p, f"{name}.b{b}.unet", spec.unet_depth)
        y = E.relu(conv(y, p, f"{name}.b{b}.dil", dilation=rate))
        branches.append(y)
    fused = branches[0] if len(branches) == 1 else E.concat(branches, axis=1)
    fused = cbam_forward(fused, p, f"{name}.cbam")
    return conv(fused, p, f"{name}.proj")
