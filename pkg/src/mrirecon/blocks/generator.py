"""Two-stage generator: U-net coarse pass, then LCFI++/SCI features feeding N attention heads."""

from __future__ import annotations

from dataclasses import dataclass, field

from .. import engine as E
from ..engine import Tensor
from .attention import attention_selection, sci_forward
from .lcfi import LCFIppSpec, init_lcfipp, lcfipp_forward
from .params import ParamStore, conv
from .rrdb import init_rrdb, rrdb_forward
from .unet import UNetSpec, init_unet, unet_forward


@dataclass(frozen=True)
class GeneratorSpec:
    backbone: UNetSpec = field(default_factory=UNetSpec)
    tap_levels: tuple = (2, 3)
    n_pairs: int = 4
    rrdb_count: int = 2
    lcfi: LCFIppSpec = field(default_factory=LCFIppSpec)
    feature_channels: int = 16
    head_channels: int = 16
    growth: int = 8

    def __post_init__(self):
        if self.n_pairs < 1:
            raise ValueError("GeneratorSpec.n_pairs must be >= 1")
        if not self.tap_levels:
            raise ValueError("GeneratorSpec.tap_levels must not be empty")
        for t in self.tap_levels:
            if not 0 <= t < self.backbone.depth:
                raise ValueError(f"tap level {t} outside decoder levels 0..{self.backbone.depth - 1}")
        if self.rrdb_count < 0:
            raise ValueError("GeneratorSpec.rrdb_count must be >= 0")


def init_generator(spec: GeneratorSpec, seed: int = 0) -> ParamStore:
    p = ParamStore(seed)
    init_unet(p, spec.backbone, "unet")
    for i, t in enumerate(spec.tap_levels):
        c = spec.backbone.decoder_channels(t)
        init_lcfipp(p, f"lcfi{i}", c, spec.lcfi)
        p.conv(f"align{i}", c, spec.feature_channels, 1)
    head_in = spec.feature_channels * len(spec.tap_levels) + spec.backbone.out_channels
    for i in range(spec.n_pairs):
        p.conv(f"head{i}.inp", head_in, spec.head_channels, 3)
        init_rrdb(p, f"head{i}.rrdb", spec.head_channels, spec.growth, spec.rrdb_count)
        p.conv(f"head{i}.image", spec.head_channels, spec.backbone.out_channels, 3,
               gain=1.0, scale=0.1)
        p.conv(f"head{i}.logit", spec.head_channels, 1, 3, gain=1.0, scale=0.1)
    return p


def generator_forward(z: Tensor, p: ParamStore, spec: GeneratorSpec):
    """Return ``(coarse, fused, images, maps)``.

    ``coarse`` is the U-net output, ``fused`` the attentive combination of the
    per-head ``images`` weighted by the softmax ``maps``. Each head predicts a
    correction on top of the coarse image.
    """
    coarse, feats = unet_forward(z, p, spec.backbone, spec.tap_levels, "unet")
    aligned = []
    for i, (t, f) in enumerate(zip(spec.tap_levels, feats)):
        f = lcfipp_forward(f, p, spec.lcfi, f"lcfi{i}")
        f = E.upsample_nearest(f, spec.backbone.decoder_factor(t))
        aligned.append(E.relu(conv(f, p, f"align{i}")))
    shared = E.concat(sci_forward(aligned) + [coarse], axis=1)

    images, logits = [], []
    for i in range(spec.n_pairs):
        h = E.relu(conv(shared, p, f"head{i}.inp"))
        h = rrdb_forward(h, p, spec.rrdb_count, f"head{i}.rrdb")
        images.append(E.add(coarse, conv(h, p, f"head{i}.image")))
        logits.append(conv(h, p, f"head{i}.logit"))
    fused, maps = attention_selection(images, logits)
    return coarse, fused, images, maps
