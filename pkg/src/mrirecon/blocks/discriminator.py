"""Multi-scale patch discriminator: three structurally identical sub-networks."""

from __future__ import annotations

from dataclasses import dataclass

from .. import engine as E
from ..engine import Tensor
from .params import ParamStore, conv


@dataclass(frozen=True)
class DiscriminatorSpec:
    scales: int = 3
    base_channels: int = 16
    layers: int = 2
    in_channels: int = 2
    slope: float = 0.2
    share_weights: bool = False

    def __post_init__(self):
        if self.scales != 3:
            raise ValueError("the discriminator uses exactly 3 scales")
        if self.layers < 1 or self.base_channels < 1:
            raise ValueError(f"invalid DiscriminatorSpec {self}")

    def min_size(self) -> int:
        # quarter resolution must survive `layers` stride-2 halvings
        return 4 * 2 ** self.layers


def _subnet_names(spec: DiscriminatorSpec) -> list[str]:
    return ["d0"] * 3 if spec.share_weights else [f"d{s}" for s in range(3)]


def init_discriminator(spec: DiscriminatorSpec, seed: int = 1) -> ParamStore:
    p = ParamStore(seed)
    for name in dict.fromkeys(_subnet_names(spec)):
        cin = spec.in_channels
        for i in range(spec.layers):
            c = spec.base_channels * 2 ** i
            p.conv(f"{name}.c{i}", cin, c, 4)
            cin = c
        p.conv(f"{name}.score", cin, 1, 3, gain=1.0)
    return p


def patch_scores(x: Tensor, p: ParamStore, spec: DiscriminatorSpec, name: str) -> Tensor:
    for i in range(spec.layers):
        x = E.leaky_relu(conv(x, p, f"{name}.c{i}", stride=2, padding=1), spec.slope)
    return conv(x, p, f"{name}.score")


def discriminator_forward(x: Tensor, p: ParamStore, spec: DiscriminatorSpec) -> list:
    """Unbounded patch-score maps at full, half and quarter resolution."""
    if x.ndim != 4 or x.shape[1] != spec.in_channels:
        raise ValueError(f"discriminator: expected N x {spec.in_channels} x H x W, got {x.shape}")
    if min(x.shape[2:]) < spec.min_size():
        raise ValueError(f"discriminator: input {x.shape[2:]} smaller than minimum {spec.min_size()}")
    out = []
    for s, name in enumerate(_subnet_names(spec)):
        if s:
            x = E.avg_pool2d(x, 2)
        out.append(patch_scores(x, p, spec, name))
    return out
