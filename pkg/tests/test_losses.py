import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import ssim_oracle
from mrirecon import engine as E
from mrirecon.engine import Tensor
from mrirecon.kspace import fft2, make_mask, undersample
from mrirecon.losses import (FeatureExtractor, LossWeights, feasible_scales, gram, l1_loss,
                             lsgan_d_loss, lsgan_g_loss, magnitude_unit, ms_ssim, perceptual_loss,
                             recon_loss, ssim, total_d_loss, total_g_loss)

FX = FeatureExtractor(seed=3)


def rand(seed, *shape, lo=0.0, hi=1.0):
    return np.random.default_rng(seed).uniform(lo, hi, shape)


def wide(fn, *arrays, **kw):
    with E.precision(np.float64):
        return float(fn(*[Tensor(a) for a in arrays], **kw).data)


# -- L1 ----------------------------------------------------------------------------

def test_l1_values():
    assert l1_loss(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2)))).item() == 0.0
    assert l1_loss(Tensor(np.zeros((3, 3))), Tensor(np.ones((3, 3)))).item() == 1.0
    assert l1_loss(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor(np.full((2, 2), 2.0))).item() == 1.0
    with pytest.raises(ValueError):
        l1_loss(Tensor(np.ones(3)), Tensor(np.ones(4)))


# -- SSIM / MS-SSIM --------------------------------------------------------------------

def test_ssim_of_identical_images_is_one():
    x = rand(0, 2, 1, 32, 32)
    assert abs(wide(ssim, x, x) - 1) < 1e-12
    assert abs(wide(ms_ssim, x, x) - 1) < 1e-12


def test_ssim_constant_vs_noisy_matches_direct_formula():
    rng = np.random.default_rng(1)
    a = np.full((32, 32), 0.5)
    b = a + rng.uniform(-1, 1, a.shape) * 0.1 * np.sqrt(3)   # uniform noise, sigma 0.1
    got = wide(ssim, a[None, None], b[None, None])
    assert abs(got - ssim_oracle.ssim(a, b)) < 1e-5


@pytest.mark.parametrize("seed", range(3))
def test_ssim_and_ms_ssim_match_direct_formula_64(seed):
    a = rand(seed, 64, 64)
    b = np.clip(a + np.random.default_rng(seed + 100).normal(0, 0.1, a.shape), 0, 1)
    assert abs(wide(ssim, a[None, None], b[None, None]) - ssim_oracle.ssim(a, b)) < 1e-5
    assert abs(wide(ms_ssim, a[None, None], b[None, None]) - ssim_oracle.ms_ssim(a, b, 3)) < 1e-5


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_ssim_symmetric_and_bounded(seed):
    a, b = rand(seed, 1, 1, 16, 16), rand(seed + 1, 1, 1, 16, 16)
    s_ab, s_ba = wide(ssim, a, b), wide(ssim, b, a)
    assert abs(s_ab - s_ba) < 1e-6
    assert s_ab <= 1 + 1e-12


def test_ms_ssim_scale_selection():
    assert feasible_scales(64) == 3
    assert feasible_scales(176) == 5
    assert feasible_scales(10) == 0
    a = rand(2, 1, 1, 32, 32)
    with pytest.raises(ValueError):
        ms_ssim(Tensor(a), Tensor(a), scales=3)
    with pytest.raises(ValueError):
        ssim(Tensor(rand(0, 1, 1, 8, 8)), Tensor(rand(1, 1, 1, 8, 8)))


def test_ms_ssim_per_sample_values():
    a = rand(3, 2, 1, 32, 32)
    b = rand(4, 2, 1, 32, 32)
    with E.precision(np.float64):
        per = ms_ssim(Tensor(a), Tensor(b), reduce=False).data
    for i in range(2):
        assert abs(per[i] - ssim_oracle.ms_ssim(a[i, 0], b[i, 0], 2)) < 1e-9


# -- reconstruction loss -------------------------------------------------------------

def test_recon_loss_zero_at_identity():
    s = Tensor(rand(5, 2, 2, 16, 16, lo=0.1, hi=0.6))
    maps = [Tensor(np.full((2, 1, 16, 16), 0.25))] * 4
    assert recon_loss(s, s, [s] * 4, maps, s, LossWeights()).item() == pytest.approx(0, abs=1e-6)


def test_recon_loss_degenerate_weights():
    s, g = Tensor(rand(6, 1, 2, 16, 16)), Tensor(rand(7, 1, 2, 16, 16))
    w = LossWeights(alpha=0.0, omega=0.0, beta=0.0, lambda_rec=3.0)
    maps = [Tensor(np.ones((1, 1, 16, 16)))]
    got = recon_loss(Tensor(rand(8, 1, 2, 16, 16)), g, [g], maps, s, w).item()
    assert got == pytest.approx(3.0 * np.mean(np.abs(g.data - s.data)), rel=1e-6)


def test_recon_loss_hand_case():
    # two-pair setup on a 16x16 piecewise-constant image, alpha 0.5, omega 1, beta 1
    s = np.zeros((1, 2, 16, 16))
    s[0, 0, :8] = 0.8
    s[0, 0, 8:] = 0.2
    g1, g2 = s + 0.1, s - 0.05
    coarse = s + 0.2
    m1 = np.full((1, 1, 16, 16), 0.75)
    m2 = 1 - m1
    fused = m1 * g1 + m2 * g2
    w = LossWeights(lambda_rec=2.0, alpha=0.5, omega=1.0, beta=1.0)
    with E.precision(np.float64):
        got = recon_loss(Tensor(coarse), Tensor(fused), [Tensor(g1), Tensor(g2)],
                         [Tensor(m1), Tensor(m2)], Tensor(s), w, ssim_scales=1).item()
    l1_fused = np.mean(np.abs(fused - s))
    masked = np.mean(np.abs(m1 * g1 - m1 * s)) + np.mean(np.abs(m2 * g2 - m2 * s))
    mag = lambda x: np.clip(np.sqrt(x[0, 0] ** 2 + x[0, 1] ** 2), 0, 1)
    ms = ssim_oracle.ms_ssim(mag(fused), mag(s), 1)
    expect = 2.0 * (0.5 * (l1_fused + masked) + 0.5 * (1 - ms) + np.mean(np.abs(coarse - s)))
    assert got == pytest.approx(expect, abs=1e-9)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10 ** 6), n=st.integers(1, 5))
def test_masked_l1_convex_collapse(seed, n):
    rng = np.random.default_rng(seed)
    g = Tensor(rng.normal(size=(2, 2, 8, 8)))
    s = Tensor(rng.normal(size=(2, 2, 8, 8)))
    logits = rng.normal(size=(2, n, 8, 8)) * 3
    maps_np = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    maps = [Tensor(maps_np[:, i:i + 1]) for i in range(n)]
    total = sum(l1_loss(E.mul(m, g), E.mul(m, s)).item() for m in maps)
    assert abs(total - l1_loss(g, s).item()) < 1e-5


# -- adversarial ------------------------------------------------------------------------

def _scores(v):
    return [Tensor(np.full((2, 1, 8 >> i, 8 >> i), v)) for i in range(3)]


def test_lsgan_values():
    assert lsgan_d_loss(_scores(1.0), _scores(0.0)).item() == 0.0
    assert lsgan_g_loss(_scores(1.0)).item() == 0.0
    assert lsgan_d_loss(_scores(0.5), _scores(0.5)).item() == pytest.approx(0.5)
    assert lsgan_g_loss(_scores(0.5)).item() == pytest.approx(0.25)
    assert total_d_loss(_scores(1.0), _scores(0.0)).item() == 0.0


# -- perceptual ---------------------------------------------------------------------------

def test_gram_of_constant_map():
    assert gram(Tensor(np.full((1, 1, 6, 5), 0.7))).data.reshape(()) == pytest.approx(0.49, rel=1e-6)
    f = rand(9, 2, 3, 4, 4)
    expect = np.einsum("nchw,ndhw->ncd", f, f) / 48
    np.testing.assert_allclose(gram(Tensor(f)).data, expect, rtol=1e-5)


def test_perceptual_zero_and_gamma_zero():
    s = Tensor(rand(10, 2, 2, 16, 16, hi=0.6))
    g = Tensor(rand(11, 2, 2, 16, 16, hi=0.6))
    assert perceptual_loss(s, s, FX, LossWeights()).item() == 0.0
    w = LossWeights(lambda_vgg=1.0, gamma=0.0)
    fa, fb = FX.features(magnitude_unit(g)), FX.features(magnitude_unit(s))
    expect = sum(np.mean((a.data.astype(np.float64) - b.data) ** 2) for a, b in zip(fa, fb))
    assert perceptual_loss(g, s, FX, w).item() == pytest.approx(expect, rel=1e-5)


def test_feature_extractor_frozen_and_deterministic():
    a, b = FeatureExtractor(seed=3), FeatureExtractor(seed=3)
    x = Tensor(rand(12, 1, 1, 16, 16))
    for fa, fb in zip(a.features(x), b.features(x)):
        assert fa.data.tobytes() == fb.data.tobytes()
    with pytest.raises(ValueError):
        a.weights[0][0][0, 0, 0, 0] = 1.0
    assert [f.shape[1] for f in a.features(x)] == [16, 32, 64, 128]
    assert a.embed(x).shape == (1, 128)


# -- totals ---------------------------------------------------------------------------------

def _setup(seed):
    s = rand(seed, 2, 2, 16, 16, hi=0.6)
    mask = make_mask(16, 16, 0.25, 0.125, seed=1)
    with E.no_grad():
        y = undersample(fft2(Tensor(s)), mask)
    return s, y, mask


def test_total_g_loss_adversarial_only():
    s, y, mask = _setup(13)
    g = Tensor(rand(14, 2, 2, 16, 16, hi=0.6))
    maps = [Tensor(np.full((2, 1, 16, 16), 0.5))] * 2
    w = LossWeights(lambda_rec=0, lambda_cyc=0, lambda_vgg=0)
    fake = [Tensor(rand(15 + i, 2, 1, 4, 4)) for i in range(3)]
    total, _ = total_g_loss(g, g, [g, g], maps, Tensor(s), y, mask, fake, FX, w)
    assert total.item() == pytest.approx(lsgan_g_loss(fake).item(), rel=1e-6)


def test_total_g_loss_perfect_generator():
    s, y, mask = _setup(16)
    st_ = Tensor(s)
    maps = [Tensor(np.full((2, 1, 16, 16), 0.5))] * 2
    fake = [Tensor(rand(17 + i, 2, 1, 4, 4)) for i in range(3)]
    total, parts = total_g_loss(st_, st_, [st_, st_], maps, st_, y, mask, fake, FX, LossWeights())
    assert parts["rec"].item() == pytest.approx(0, abs=1e-5)
    assert parts["cyc"].item() == pytest.approx(0, abs=1e-5)
    assert parts["vgg"].item() == 0.0
    assert total.item() == pytest.approx(lsgan_g_loss(fake).item(), abs=1e-4)


def test_total_g_loss_equals_sum_of_parts():
    s, y, mask = _setup(18)
    rng = np.random.default_rng(19)
    with E.precision(np.float64):
        c, f = Tensor(s + rng.normal(0, 0.05, s.shape)), Tensor(s + rng.normal(0, 0.05, s.shape))
        imgs = [Tensor(s + rng.normal(0, 0.05, s.shape)) for _ in range(2)]
        maps = [Tensor(np.full((2, 1, 16, 16), 0.3)), Tensor(np.full((2, 1, 16, 16), 0.7))]
        fake = [Tensor(rng.normal(size=(2, 1, 4 >> i, 4 >> i))) for i in range(3)]
        total, parts = total_g_loss(c, f, imgs, maps, Tensor(s), Tensor(y.data), mask, fake, FX,
                                    LossWeights())
    assert abs(total.item() - sum(p.item() for p in parts.values())) < 1e-6


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(alpha=1.5)
    with pytest.raises(ValueError):
        LossWeights(lambda_rec=-1)
