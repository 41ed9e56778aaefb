"""Training objective: reconstruction (L1 + MS-SSIM), LSGAN, k-space consistency, perceptual."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import engine as E
from .blocks.params import ParamStore
from .engine import ConvSpec, Tensor
from .kspace import dc_residual, magnitude

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


@dataclass(frozen=True)
class LossWeights:
    lambda_rec: float = 10.0
    alpha: float = 0.84
    omega: float = 0.5
    beta: float = 1.0
    lambda_cyc: float = 5.0
    lambda_vgg: float = 0.1
    gamma: float = 1.0

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if v < 0:
                raise ValueError(f"LossWeights.{k} must be nonnegative, got {v}")
        if self.alpha > 1:
            raise ValueError(f"LossWeights.alpha must be in [0, 1], got {self.alpha}")


def l1_loss(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"l1_loss: shape mismatch {a.shape} vs {b.shape}")
    return E.reduce_mean(E.abs(E.sub(a, b)))


def mse_loss(a: Tensor, b) -> Tensor:
    return E.reduce_mean(E.square(E.sub(a, b)))


# ---------------------------------------------------------------------------
# SSIM / MS-SSIM
# ---------------------------------------------------------------------------

def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _blur(x: Tensor, g: np.ndarray) -> Tensor:
    """Valid-region filtering of every channel with the 2-D window outer(g, g)."""
    size = g.size
    win = Tensor(np.outer(g, g).reshape(1, 1, size, size).astype(E.default_dtype()))
    n, c, h, w = x.shape
    y = E.conv2d(E.reshape(x, (n * c, 1, h, w)), win, None, ConvSpec(1, 1, size))
    return E.reshape(y, (n, c) + y.shape[2:])


def ssim_maps(a: Tensor, b: Tensor, window: int = 11, sigma: float = 1.5,
              data_range: float = 1.0, k1: float = 0.01, k2: float = 0.03):
    """Per-pixel (ssim, contrast-structure) maps over the valid filtering region."""
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape[2:]) < window:
        raise ValueError(f"ssim: image {a.shape[2:]} smaller than window {window}")
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    g = gaussian_window(window, sigma)
    mu_a, mu_b = _blur(a, g), _blur(b, g)
    mu_aa, mu_bb, mu_ab = E.square(mu_a), E.square(mu_b), E.mul(mu_a, mu_b)
    var_a = E.sub(_blur(E.square(a), g), mu_aa)
    var_b = E.sub(_blur(E.square(b), g), mu_bb)
    cov = E.sub(_blur(E.mul(a, b), g), mu_ab)
    lum = E.div(E.add(E.scale(mu_ab, 2.0), c1), E.add(E.add(mu_aa, mu_bb), c1))
    cs = E.div(E.add(E.scale(cov, 2.0), c2), E.add(E.add(var_a, var_b), c2))
    return E.mul(lum, cs), cs


def _per_sample_mean(m: Tensor) -> Tensor:
    return E.reduce_mean(m, axis=tuple(range(1, m.ndim)))


def ssim(a: Tensor, b: Tensor, window: int = 11, sigma: float = 1.5, c1=None, c2=None,
         data_range: float = 1.0, reduce: bool = True) -> Tensor:
    """Mean SSIM (Gaussian window, valid region); ``reduce=False`` gives one value per sample."""
    k1 = 0.01 if c1 is None else math.sqrt(c1) / data_range
    k2 = 0.03 if c2 is None else math.sqrt(c2) / data_range
    smap, _ = ssim_maps(a, b, window, sigma, data_range, k1, k2)
    per = _per_sample_mean(smap)
    return E.reduce_mean(per) if reduce else per


def feasible_scales(size: int, window: int = 11, max_scales: int = 5) -> int:
    s = 0
    while s < max_scales and size >= window * 2 ** s:
        s += 1
    return s


def ms_ssim(a: Tensor, b: Tensor, scales: int | None = None, weights=None, window: int = 11,
            sigma: float = 1.5, data_range: float = 1.0, reduce: bool = True,
            floor: float = 1e-6) -> Tensor:
    """Multi-scale SSIM: prod_j cs_j^w_j (j < M) times ssim_M^w_M.

    ``scales=None`` picks the largest count (at most 5) for which the smallest
    side is at least ``window * 2**(scales-1)``; the canonical weights are then
    truncated and renormalised. Per-scale values are floored at ``floor`` before
    exponentiation.
    """
    size = min(a.shape[2:])
    if scales is None:
        scales = feasible_scales(size, window)
        if scales == 0:
            raise ValueError(f"ms_ssim: image side {size} smaller than window {window}")
    if size < window * 2 ** (scales - 1):
        raise ValueError(f"ms_ssim: image side {size} too small for {scales} scales "
                         f"(needs {window * 2 ** (scales - 1)})")
    if weights is None:
        w = np.asarray(MS_SSIM_WEIGHTS[:scales], dtype=np.float64)
        weights = tuple(w / w.sum())
    if len(weights) != scales:
        raise ValueError(f"ms_ssim: {len(weights)} weights for {scales} scales")
    result = None
    for j in range(scales):
        smap, cs = ssim_maps(a, b, window, sigma, data_range)
        last = j == scales - 1
        val = _per_sample_mean(smap if last else cs)
        term = E.power(E.clip(val, floor, None), float(weights[j]))
        result = term if result is None else E.mul(result, term)
        if not last:
            a, b = E.avg_pool2d(a, 2), E.avg_pool2d(b, 2)
    return E.reduce_mean(result) if reduce else result


def magnitude_unit(x: Tensor) -> Tensor:
    """Magnitude of a 2-channel image clipped to [0, 1]."""
    return E.clip(magnitude(x), 0.0, 1.0)


# ---------------------------------------------------------------------------
# reconstruction and adversarial terms
# ---------------------------------------------------------------------------

def recon_loss(coarse: Tensor, fused: Tensor, images: list, maps: list, s: Tensor,
               w: LossWeights, ssim_scales: int | None = None) -> Tensor:
    pixel = l1_loss(fused, s)
    if w.omega:
        masked = None
        for m, g in zip(maps, images):
            term = l1_loss(E.mul(m, g), E.mul(m, s))
            masked = term if masked is None else E.add(masked, term)
        pixel = E.add(pixel, E.scale(masked, w.omega))
    total = E.scale(pixel, 1.0 - w.alpha)
    if w.alpha:
        msv = ms_ssim(magnitude_unit(fused), magnitude_unit(s), scales=ssim_scales)
        total = E.add(total, E.scale(E.sub(1.0, msv), w.alpha))
    if w.beta:
        total = E.add(total, E.scale(l1_loss(coarse, s), w.beta))
    return E.scale(total, w.lambda_rec)


def lsgan_d_loss(real_scores: list, fake_scores: list) -> Tensor:
    """Mean over scales of mean((D(s) - 1)^2) + mean(D(G)^2)."""
    terms = [E.add(mse_loss(r, 1.0), E.reduce_mean(E.square(f)))
             for r, f in zip(real_scores, fake_scores)]
    return E.scale(_sum(terms), 1.0 / len(terms))


def lsgan_g_loss(fake_scores: list) -> Tensor:
    terms = [mse_loss(f, 1.0) for f in fake_scores]
    return E.scale(_sum(terms), 1.0 / len(terms))


def _sum(terms):
    out = terms[0]
    for t in terms[1:]:
        out = E.add(out, t)
    return out


# ---------------------------------------------------------------------------
# perceptual loss with a fixed feature pyramid
# ---------------------------------------------------------------------------

class FeatureExtractor:
    """Fixed conv pyramid: 4 stages of conv3x3 -> relu -> avgpool2.

    Weights are drawn once from ``seed`` (Kaiming fan-in) and never trained;
    ``from_store`` accepts externally supplied weights named ``stage{i}.w``/``.b``.
    """

    CHANNELS = (16, 32, 64, 128)

    def __init__(self, seed: int = 1234, in_channels: int = 1, channels=CHANNELS):
        self.seed = seed
        self.channels = tuple(channels)
        store = ParamStore(seed)
        cin = in_channels
        for i, c in enumerate(self.channels):
            store.conv(f"stage{i}", cin, c, 3)
            cin = c
        self._freeze(store)

    @classmethod
    def from_store(cls, store: ParamStore) -> "FeatureExtractor":
        fx = cls.__new__(cls)
        fx.seed = store.seed
        n = len([k for k in store.names() if k.endswith(".w")])
        fx.channels = tuple(store[f"stage{i}.w"].shape[0] for i in range(n))
        fx._freeze(store)
        return fx

    def _freeze(self, store: ParamStore) -> None:
        self.weights = []
        for i in range(len(self.channels)):
            w = np.array(store[f"stage{i}.w"].data)
            b = np.array(store[f"stage{i}.b"].data)
            w.flags.writeable = False
            b.flags.writeable = False
            self.weights.append((w, b))

    def features(self, x: Tensor) -> list:
        """Pre-activation feature maps of every stage."""
        feats = []
        for w, b in self.weights:
            cout, cin, k, _ = w.shape
            pre = E.conv2d(x, Tensor(w), Tensor(b), ConvSpec(cin, cout, k, padding=k // 2))
            feats.append(pre)
            x = E.avg_pool2d(E.relu(pre), 2)
        return feats

    def embed(self, x: Tensor) -> np.ndarray:
        """Globally pooled post-activation final-stage features, one row per sample."""
        with E.no_grad():
            last = self.features(x)[-1]
            return E.global_avg_pool(E.relu(last)).data.reshape(x.shape[0], -1).astype(np.float64)


def gram(f: Tensor) -> Tensor:
    """Per-sample C x C Gram matrix F F^T / (C H W)."""
    n, c, h, w = f.shape
    flat = E.reshape(f, (n, c, h * w))
    return E.scale(E.matmul(flat, E.transpose(flat, (0, 2, 1))), 1.0 / (c * h * w))


def perceptual_loss(fused: Tensor, s: Tensor, fx: FeatureExtractor, w: LossWeights) -> Tensor:
    a = fx.features(magnitude_unit(fused))
    with E.no_grad():
        b = fx.features(magnitude_unit(s))
    terms = []
    for fa, fb in zip(a, b):
        term = mse_loss(fa, fb)
        if w.gamma:
            term = E.add(term, E.scale(mse_loss(gram(fa), gram(fb)), w.gamma))
        terms.append(term)
    return E.scale(_sum(terms), w.lambda_vgg)


# ---------------------------------------------------------------------------
# totals
# ---------------------------------------------------------------------------

def total_g_loss(coarse, fused, images, maps, s, y, mask, fake_scores, fx: FeatureExtractor,
                 w: LossWeights, ssim_scales: int | None = None):
    """Generator objective and its named components (as tensors)."""
    parts = {}
    parts["rec"] = recon_loss(coarse, fused, images, maps, s, w, ssim_scales)
    parts["adv_g"] = lsgan_g_loss(fake_scores)
    parts["cyc"] = E.scale(dc_residual(fused, y, mask), w.lambda_cyc)
    parts["vgg"] = perceptual_loss(fused, s, fx, w) if w.lambda_vgg else Tensor(0.0)
    total = _sum([parts["rec"], parts["adv_g"], parts["cyc"], parts["vgg"]])
    return total, parts


def total_d_loss(real_scores, fake_scores) -> Tensor:
    return lsgan_d_loss(real_scores, fake_scores)
