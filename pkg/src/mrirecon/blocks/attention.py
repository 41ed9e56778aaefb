"""Channel/spatial attention (CBAM), branch interaction (SCI) and attentive selection."""

from __future__ import annotations

from .. import engine as E
from ..engine import Tensor
from .params import ParamStore, conv


def init_cbam(p: ParamStore, name: str, channels: int, reduction: int = 4,
              spatial_kernel: int = 7) -> None:
    hidden = max(1, channels // reduction)
    p.conv(f"{name}.fc1", channels, hidden, 1)
    p.conv(f"{name}.fc2", hidden, channels, 1, gain=1.0)
    p.conv(f"{name}.spatial", 2, 1, spatial_kernel, gain=1.0)


def cbam_weights(x: Tensor, p: ParamStore, name: str):
    """Return the (channel, spatial) sigmoid gates without applying them."""
    if x.ndim != 4:
        raise ValueError(f"cbam: expected 4-D input, got {x.shape}")

    def mlp(v):
        return conv(E.relu(conv(v, p, f"{name}.fc1")), p, f"{name}.fc2")

    ch = E.sigmoid(E.add(mlp(E.global_avg_pool(x)), mlp(E.global_max_pool(x))))
    xc = E.mul(x, ch)
    pooled = E.concat([E.reduce_mean(xc, axis=1, keepdims=True),
                       E.reduce_max(xc, axis=1, keepdims=True)], axis=1)
    sp = E.sigmoid(conv(pooled, p, f"{name}.spatial"))
    return ch, sp, xc


def cbam_forward(x: Tensor, p: ParamStore, name: str = "cbam") -> Tensor:
    """Channel attention then spatial attention, both multiplicative; shape preserved."""
    _, sp, xc = cbam_weights(x, p, name)
    return E.mul(xc, sp)


def sci_forward(features: list) -> list:
    """Parameter-free interaction between same-shaped branch features.

    Each branch is summarised by its global-average channel descriptor
    ``v_k`` (length C). Branch affinities ``<v_k, v_j> / C`` are row-softmaxed
    into weights ``A``, and branch ``k`` becomes ``sum_j A[k, j] * f_j``.
    Permuting the branches permutes the outputs the same way.
    """
    if len(features) < 1:
        raise ValueError("sci: need at least one feature map")
    shape = features[0].shape
    for f in features:
        if f.shape != shape:
            raise ValueError(f"sci: feature shapes differ: {shape} vs {f.shape}")
    k = len(features)
    n, c, h, w = shape
    stacked = E.stack(features, axis=1)                       # N K C H W
    desc = E.reduce_mean(stacked, axis=(3, 4))                # N K C
    affinity = E.scale(E.matmul(desc, E.transpose(desc, (0, 2, 1))), 1.0 / c)  # N K K
    weights = E.softmax(affinity, axis=-1)
    flat = E.reshape(stacked, (n, k, c * h * w))
    mixed = E.reshape(E.matmul(weights, flat), (n, k, c, h, w))
    return [E.reshape(mixed[:, i], shape) for i in range(k)]


def attention_selection(images: list, logits: list):
    """Fuse N candidate images with pixelwise-softmax attention maps.

    Returns ``(fused, maps)`` where ``maps[i]`` is N x 1 x H x W, the maps sum
    to one at every pixel and ``fused = sum_i maps[i] * images[i]``.
    """
    if len(images) != len(logits):
        raise ValueError(f"attention_selection: {len(images)} images but {len(logits)} logit maps")
    if not images:
        raise ValueError("attention_selection: need at least one pair")
    shape = images[0].shape
    for g in images:
        if g.shape != shape:
            raise ValueError(f"attention_selection: image shapes differ: {shape} vs {g.shape}")
    for m in logits:
        if m.shape != (shape[0], 1) + shape[2:]:
            raise ValueError(f"attention_selection: logit map {m.shape} incompatible with {shape}")
    weights = E.softmax(E.concat(logits, axis=1), axis=1)     # N x Npairs x H x W
    maps = [weights[:, i:i + 1] for i in range(len(images))]
    fused = E.mul(maps[0], images[0])
    for m, g in zip(maps[1:], images[1:]):
        fused = E.add(fused, E.mul(m, g))
    return fused, maps
