import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mrirecon import engine as E
from mrirecon.data import phantom_generate, to_complex
from mrirecon.engine import Tensor
from mrirecon.kspace import (dc_residual, fft2, fft_last_axis, ifft2, make_mask, undersample,
                             zero_filled)
from mrirecon.metrics import psnr

SIZES = [8, 16, 32, 64, 128, 256]


def dft_matrix(n, inverse=False):
    j = np.arange(n)
    sign = 1 if inverse else -1
    return np.exp(sign * 2j * np.pi * np.outer(j, j) / n) / math.sqrt(n)


def direct_fft2(img):
    """Orthonormal 2-D DFT by explicit matrix products, then the DC-to-centre quadrant swap."""
    h, w = img.shape
    return np.roll(dft_matrix(h) @ img @ dft_matrix(w).T, (h // 2, w // 2), axis=(0, 1))


def rand_complex(seed, n, h, w=None):
    return np.random.default_rng(seed).normal(size=(n, 2, h, w or h))


def to_c(x):
    return x[:, 0] + 1j * x[:, 1]


def test_fft_last_axis_matches_dft_sum():
    x = np.random.default_rng(0).normal(size=(3, 16)) + 1j * np.random.default_rng(1).normal(size=(3, 16))
    np.testing.assert_allclose(fft_last_axis(x), x @ dft_matrix(16).T * 4, atol=1e-12)
    np.testing.assert_allclose(fft_last_axis(x, inverse=True), x @ dft_matrix(16, True).T * 4, atol=1e-12)


@pytest.mark.parametrize("h,w", [(8, 8), (16, 8), (4, 32)])
def test_fft2_matches_direct_dft(h, w):
    x = rand_complex(2, 1, h, w)
    with E.precision(np.float64):
        got = to_c(fft2(Tensor(x)).data)[0]
    np.testing.assert_allclose(got, direct_fft2(to_c(x)[0]), atol=1e-12)


def test_center_impulse_gives_flat_spectrum():
    x = np.zeros((1, 2, 8, 8))
    x[0, 0, 4, 4] = 1.0
    with E.precision(np.float64):
        k = to_c(fft2(Tensor(x)).data)[0]
    np.testing.assert_allclose(np.abs(k), 1 / 8, atol=1e-14)
    np.testing.assert_allclose(np.abs(direct_fft2(to_c(x)[0])), 1 / 8, atol=1e-14)


def test_dc_at_center():
    x = np.zeros((1, 2, 8, 8))
    x[0, 0] = 1.0
    k = fft2(Tensor(x)).data
    assert abs(k[0, 0, 4, 4] - 8.0) < 1e-5
    assert np.abs(k).sum() - 8.0 < 1e-4


@pytest.mark.parametrize("n", SIZES)
def test_round_trip_parseval_linearity(n):
    x, z = rand_complex(n, 2, n), rand_complex(n + 1, 2, n)
    k = fft2(Tensor(x)).data
    back = ifft2(Tensor(k)).data
    assert np.max(np.abs(back - x)) < 1e-5
    assert abs(np.sum(k.astype(np.float64) ** 2) / np.sum(x ** 2) - 1) < 1e-4
    a, b = 0.7, -1.3
    lhs = fft2(Tensor(a * x + b * z)).data
    rhs = a * k + b * fft2(Tensor(z)).data
    assert np.max(np.abs(lhs - rhs)) / np.max(np.abs(rhs)) < 1e-4


@pytest.mark.parametrize("shape", [(1, 2, 12, 16), (1, 2, 16, 6), (1, 3, 8, 8), (2, 8, 8)])
def test_fft_rejects_bad_shapes(shape):
    with pytest.raises(ValueError):
        fft2(Tensor(np.zeros(shape)))
    with pytest.raises(ValueError):
        ifft2(Tensor(np.zeros(shape)))


def test_fft_backward_is_adjoint():
    x = Tensor(rand_complex(3, 1, 8), requires_grad=True)
    g = rand_complex(4, 1, 8)
    with E.precision(np.float64):
        x.data = x.data.astype(np.float64)
        E.backward(E.reduce_sum(E.mul(fft2(x), Tensor(g))))
        np.testing.assert_allclose(x.grad, ifft2(Tensor(g)).data, atol=1e-12)


# -- masks -------------------------------------------------------------------

def test_mask_exact_count():
    m = make_mask(64, 64, 0.125, 0.0, seed=3)
    assert m.count == 512
    assert make_mask(64, 64, 0.125, 0.04, seed=3).count == 512


@settings(max_examples=40, deadline=None)
@given(size=st.sampled_from([8, 16, 32, 64]), rate=st.floats(0.05, 1.0), cf=st.floats(0.0, 0.05),
       seed=st.integers(0, 1000))
def test_mask_count_property(size, rate, cf, seed):
    budget = math.floor(rate * size * size + 0.5)
    if round(cf * size + 1e-9) * size > budget or budget == 0:
        return
    try:
        m = make_mask(size, size, rate, cf, seed)
    except ValueError:
        return
    assert m.count == budget
    assert set(np.unique(m.mask)) <= {0.0, 1.0}


def test_mask_center_rows_kept_and_deterministic():
    a = make_mask(32, 32, 0.25, 0.125, seed=5)
    b = make_mask(32, 32, 0.25, 0.125, seed=5)
    np.testing.assert_array_equal(a.mask, b.mask)
    np.testing.assert_array_equal(a.mask[14:18], 1.0)
    assert not np.array_equal(a.mask, make_mask(32, 32, 0.25, 0.125, seed=6).mask)


def test_mask_full_rate_and_errors():
    np.testing.assert_array_equal(make_mask(16, 16, 1.0, 0.0).mask, 1.0)
    with pytest.raises(ValueError):
        make_mask(16, 16, 0.05, 0.5)
    with pytest.raises(ValueError):
        make_mask(16, 16, 0.0)
    with pytest.raises(ValueError):
        make_mask(16, 16, 0.3, 0.0, mode="line")


def test_line_mask_selects_whole_rows():
    m = make_mask(32, 32, 0.25, 0.125, seed=1, mode="line").mask
    assert m.sum() == 256
    assert set(m.sum(axis=1)) <= {0.0, 32.0}


# -- measurement operators ----------------------------------------------------

def test_undersample_cases():
    k = Tensor(rand_complex(7, 2, 16))
    full = make_mask(16, 16, 1.0, 0.0)
    np.testing.assert_array_equal(undersample(k, full).data, k.data)
    empty = make_mask(16, 16, 1.0, 0.0)
    empty.mask[:] = 0.0
    np.testing.assert_array_equal(undersample(k, empty).data, 0.0)
    m = make_mask(16, 16, 0.3, 0.0, seed=2)
    once = undersample(k, m).data
    np.testing.assert_array_equal(undersample(Tensor(once), m).data, once)
    with pytest.raises(ValueError):
        undersample(Tensor(np.zeros((1, 2, 8, 8))), m)


def test_zero_filled_cases():
    s = Tensor(rand_complex(8, 1, 16))
    full = make_mask(16, 16, 1.0, 0.0)
    assert np.max(np.abs(zero_filled(undersample(fft2(s), full)).data - s.data)) < 1e-5
    np.testing.assert_array_equal(zero_filled(Tensor(np.zeros((1, 2, 16, 16)))).data, 0.0)


def test_undersampling_aliases_phantom():
    img = to_complex(phantom_generate(1, 64, seed=4)[0])[None]
    s = Tensor(img)
    mag = lambda a: np.sqrt(a[:, 0] ** 2 + a[:, 1] ** 2)
    scores = {}
    for rate in (0.125, 0.5, 1.0):
        m = make_mask(64, 64, rate, 0.04 if rate < 1 else 0.0, seed=0)
        scores[rate] = psnr(mag(zero_filled(undersample(fft2(s), m)).data), mag(img))
    assert math.isfinite(scores[0.125]) and scores[0.125] < scores[0.5] < scores[1.0]


def test_dc_residual_cases():
    m = make_mask(16, 16, 0.25, 0.125, seed=9)
    s = Tensor(rand_complex(10, 2, 16))
    y = undersample(fft2(s), m)
    assert dc_residual(s, y, m).item() < 1e-5
    zero = Tensor(np.zeros(s.shape))
    sampled = y.data[:, :, m.mask == 1]
    assert abs(dc_residual(zero, y, m).item() - np.mean(np.abs(sampled))) < 1e-6
    with pytest.raises(ValueError):
        dc_residual(Tensor(np.zeros((1, 2, 16, 16))), y, m)


def test_dc_residual_own_measurements_zero():
    # a zero-filled reconstruction is consistent with its own measurements
    m = make_mask(32, 32, 0.125, 0.04, seed=1)
    y = undersample(fft2(Tensor(rand_complex(11, 1, 32))), m)
    assert dc_residual(zero_filled(y), y, m).item() < 1e-5
