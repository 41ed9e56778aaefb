import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import gradcases
from mrirecon import engine as E
from mrirecon.engine import ConvSpec, Tensor


def naive_conv(x, w, b, stride=1, padding=0, dilation=1):
    """Direct seven-loop cross-correlation."""
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - dilation * (k - 1) - 1) // stride + 1
    wo = (wd + 2 * padding - dilation * (k - 1) - 1) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for bi in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0 if b is None else b[oc]
                    for ic in range(c):
                        for u in range(k):
                            for v in range(k):
                                acc += w[oc, ic, u, v] * xp[bi, ic, i * stride + u * dilation,
                                                             j * stride + v * dilation]
                    out[bi, oc, i, j] = acc
    return out


def naive_overlap_add(x, w, stride, padding):
    """Transpose convolution by scattering every input pixel times the kernel."""
    n, o, hi, wi = x.shape
    _, c, k, _ = w.shape
    ho = (hi - 1) * stride - 2 * padding + k
    wo = (wi - 1) * stride - 2 * padding + k
    full = np.zeros((n, c, ho + 2 * padding, wo + 2 * padding))
    for bi in range(n):
        for oc in range(o):
            for i in range(hi):
                for j in range(wi):
                    full[bi, :, i * stride:i * stride + k, j * stride:j * stride + k] += x[bi, oc, i, j] * w[oc]
    return full[:, :, padding:padding + ho, padding:padding + wo]


# -- elementwise -------------------------------------------------------------

def test_mul_arithmetic():
    out = E.mul(Tensor([[1, 2], [3, 4]]), Tensor([[2, 2], [2, 2]]))
    np.testing.assert_array_equal(out.data, [[2, 4], [6, 8]])


def test_identities():
    g = Tensor(np.random.default_rng(0).normal(size=(2, 3)))
    np.testing.assert_array_equal(E.mul(Tensor(np.ones((2, 3))), g).data, g.data)
    np.testing.assert_array_equal(E.add(g, 0.0).data, g.data)


def test_shape_mismatch_reports_both_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(4, 5\)"):
        E.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))


def test_broadcast_gradient_sums_over_expanded_axes():
    a = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.ones((1, 3)), requires_grad=True)
    E.backward(E.reduce_sum(E.mul(a, b)))
    np.testing.assert_array_equal(b.grad, [[2, 2, 2]])


def test_activations():
    assert E.sigmoid(Tensor(0.0)).item() == 0.5
    np.testing.assert_array_equal(E.relu(Tensor([-1.0, 2.0])).data, [0, 2])
    np.testing.assert_allclose(E.leaky_relu(Tensor([-1.0]), 0.2).data, [-0.2], rtol=1e-6)
    np.testing.assert_allclose(E.tanh(Tensor([0.5])).data, np.tanh(0.5), rtol=1e-6)


def test_sigmoid_stable_for_large_inputs():
    out = E.sigmoid(Tensor([-500.0, 500.0])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [0, 1], atol=1e-7)


# -- convolution -------------------------------------------------------------

def test_conv_ones():
    out = E.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 2, 2))), None, ConvSpec(1, 1, 2))
    assert out.shape == (1, 1, 2, 2)
    np.testing.assert_array_equal(out.data, 4.0)


def test_conv_identity_kernel():
    x = np.random.default_rng(1).normal(size=(2, 3, 5, 5)).astype(np.float32)
    w = np.eye(3).reshape(3, 3, 1, 1)
    out = E.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(3)), ConvSpec(3, 3, 1))
    np.testing.assert_array_equal(out.data, x)


def test_conv_dilation_corners():
    rng = np.random.default_rng(2)
    x, w = rng.normal(size=(1, 1, 5, 5)), rng.normal(size=(1, 1, 3, 3))
    out = E.conv2d(Tensor(x), Tensor(w), None, ConvSpec(1, 1, 3, dilation=2))
    assert out.shape == (1, 1, 1, 1)
    expect = sum(w[0, 0, i, j] * x[0, 0, 2 * i, 2 * j] for i in range(3) for j in range(3))
    np.testing.assert_allclose(out.item(), expect, rtol=1e-5)


@pytest.mark.parametrize("k,stride,padding,dilation", [
    (3, 1, 1, 1), (3, 2, 1, 1), (4, 2, 1, 1), (3, 1, 2, 2), (1, 1, 0, 1), (5, 3, 2, 1), (3, 1, 0, 3)])
def test_conv_matches_naive(k, stride, padding, dilation):
    rng = np.random.default_rng(k * 7 + stride)
    x, w, b = rng.normal(size=(2, 3, 9, 9)), rng.normal(size=(4, 3, k, k)), rng.normal(size=4)
    with E.precision(np.float64):
        got = E.conv2d(Tensor(x), Tensor(w), Tensor(b), ConvSpec(3, 4, k, stride, padding, dilation)).data
    np.testing.assert_allclose(got, naive_conv(x, w, b, stride, padding, dilation), atol=1e-10)


def test_conv_transpose_overlap_add_pattern():
    out = E.conv2d_transpose(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 2, 2))), None,
                             ConvSpec(1, 1, 2, stride=2))
    np.testing.assert_array_equal(out.data, np.ones((1, 1, 4, 4)))
    out = E.conv2d_transpose(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))), None,
                             ConvSpec(1, 1, 3, stride=2))
    expect = np.array([[1, 1, 2, 1, 1], [1, 1, 2, 1, 1], [2, 2, 4, 2, 2], [1, 1, 2, 1, 1], [1, 1, 2, 1, 1]])
    np.testing.assert_array_equal(out.data[0, 0], expect)


@pytest.mark.parametrize("k,stride,padding", [(3, 2, 1), (4, 2, 1), (2, 2, 0), (3, 1, 1)])
def test_conv_transpose_matches_overlap_add(k, stride, padding):
    rng = np.random.default_rng(k + stride)
    spec = ConvSpec(3, 4, k, stride, padding)
    x, w = rng.normal(size=(2, 4, 5, 5)), rng.normal(size=(4, 3, k, k))
    with E.precision(np.float64):
        got = E.conv2d_transpose(Tensor(x), Tensor(w), None, spec).data
    np.testing.assert_allclose(got, naive_overlap_add(x, w, stride, padding), atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(k=st.integers(1, 4), stride=st.integers(1, 3), padding=st.integers(0, 2),
       dilation=st.integers(1, 2), size=st.integers(6, 12), seed=st.integers(0, 2 ** 16))
def test_conv_adjoint_inner_product(k, stride, padding, dilation, size, seed):
    spec = ConvSpec(2, 3, k, stride, padding, dilation)
    try:
        ho = spec.output_size(size)
    except ValueError:
        return
    if spec.output_size(spec.transpose_output_size(ho)) != ho or spec.transpose_output_size(ho) != size:
        return
    rng = np.random.default_rng(seed)
    x, y, w = rng.normal(size=(2, 2, size, size)), rng.normal(size=(2, 3, ho, ho)), rng.normal(size=(3, 2, k, k))
    with E.precision(np.float64):
        lhs = np.sum(E.conv2d(Tensor(x), Tensor(w), None, spec).data * y)
        rhs = np.sum(x * E.conv2d_transpose(Tensor(y), Tensor(w), None, spec).data)
    assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))


def test_conv_invalid_spec_rejected():
    with pytest.raises(ValueError):
        E.conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))), None, ConvSpec(1, 1, 3))
    with pytest.raises(ValueError):
        ConvSpec(1, 1, 0)
    with pytest.raises(ValueError):
        E.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 1, 3, 3))), None, ConvSpec(1, 1, 3))


# -- pooling and shape ops ----------------------------------------------------

def test_pooling_values():
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
    assert E.max_pool2d(x, 2).item() == 4.0
    assert E.avg_pool2d(x, 2).item() == 2.5
    c = Tensor(np.full((2, 3, 5, 5), 1.5))
    np.testing.assert_array_equal(E.global_avg_pool(c).data, 1.5)
    assert E.global_max_pool(c).shape == (2, 3, 1, 1)
    with pytest.raises(ValueError):
        E.max_pool2d(x, 3)


def test_softmax_uniform_and_matmul_identity():
    s = E.softmax(Tensor(np.full((2, 5), 3.0)), axis=1).data
    np.testing.assert_allclose(s, 0.2, rtol=1e-6)
    a = np.random.default_rng(3).normal(size=(4, 4)).astype(np.float32)
    np.testing.assert_array_equal(E.matmul(Tensor(np.eye(4)), Tensor(a)).data, a)


def test_shape_ops_values():
    x = np.arange(24, dtype=np.float32).reshape(1, 2, 3, 4)
    np.testing.assert_array_equal(E.transpose(Tensor(x), (0, 3, 1, 2)).data, x.transpose(0, 3, 1, 2))
    np.testing.assert_array_equal(E.concat([Tensor(x), Tensor(x)], axis=1).data, np.concatenate([x, x], 1))
    np.testing.assert_array_equal(E.slice(Tensor(x), (slice(None), 1)).data, x[:, 1])
    up = E.upsample_nearest(Tensor(x), 2).data
    np.testing.assert_array_equal(up[:, :, ::2, ::2], x)
    np.testing.assert_array_equal(up[:, :, 1::2, 1::2], x)
    assert E.reduce_sum(Tensor(x), axis=(1, 2)).shape == (1, 4)


# -- tape and backward ---------------------------------------------------------

def test_backward_basic_cases():
    x = Tensor(np.random.default_rng(4).normal(size=(3, 4)), requires_grad=True)
    E.backward(E.reduce_sum(x))
    np.testing.assert_array_equal(x.grad, 1.0)
    E.backward(E.reduce_sum(E.mul(x, x)))
    np.testing.assert_allclose(x.grad, 2 * x.data, rtol=1e-6)


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        E.backward(E.mul(x, 2.0))


def test_no_grad_records_nothing():
    E.current_tape().reset()
    x = Tensor(np.ones(3), requires_grad=True)
    with E.no_grad():
        E.exp(x)
    assert len(E.current_tape()) == 0


def test_backward_clears_tape_unless_retained():
    x = Tensor(np.ones(3), requires_grad=True)
    y = E.reduce_sum(E.exp(x))
    E.backward(y, retain=True)
    assert len(E.current_tape()) > 0
    E.backward(y)
    assert len(E.current_tape()) == 0


def test_shared_subexpression_gradients_accumulate():
    x = Tensor(np.array([0.3, -0.7]), requires_grad=True)
    h = E.tanh(x)
    E.backward(E.reduce_sum(E.add(E.mul(h, h), h)))
    t = np.tanh(x.data)
    np.testing.assert_allclose(x.grad, (2 * t + 1) * (1 - t * t), rtol=1e-5)


def test_composite_conv_relu_mean_gradient():
    rng = np.random.default_rng(5)
    spec = ConvSpec(2, 1, 3, padding=1)
    w = rng.normal(size=(1, 2, 3, 3)) * 0.3
    x = Tensor(rng.normal(size=(1, 2, 16, 16)))
    f = lambda t: E.reduce_mean(E.relu(E.conv2d(t, Tensor(w), None, spec)))
    assert E.grad_check(f, x, 1e-6, wide=True) < 1e-6
    # float32 probe: only pixels whose 3x3 neighbourhood of pre-activations is clear of the kink
    pre = E.conv2d(x, Tensor(w), None, spec).data[0, 0]
    near = np.pad(np.abs(pre) < 0.1, 1)
    unsafe = np.zeros((16, 16), bool)
    for i in range(3):
        for j in range(3):
            unsafe |= near[i:i + 16, j:j + 16]
    safe = np.flatnonzero(np.tile(~unsafe, (2, 1, 1)).reshape(-1))
    assert len(safe) > 100
    assert E.grad_check(f, x, 1e-2, coords=safe) < 1e-3


def test_grad_check_linear_is_exact():
    a = np.random.default_rng(6).normal(size=(5,))
    x = Tensor(np.ones(5))
    assert E.grad_check(lambda t: E.reduce_sum(E.mul(t, Tensor(a))), x, 1e-3, wide=True) < 1e-9


def test_grad_check_restores_data_and_dtype():
    x = Tensor(np.linspace(-1, 1, 6))
    before = x.data.copy()
    E.grad_check(lambda t: E.reduce_sum(E.exp(t)), x, 1e-3, wide=True)
    np.testing.assert_array_equal(x.data, before)
    assert x.data.dtype == np.float32


def test_grad_check_detects_wrong_gradient():
    def bad(t):
        out = Tensor(np.sum(t.data ** 2))
        return E.apply("bad", [t], out.data, lambda g: (g * t.data,))  # should be 2x
    x = Tensor(np.array([0.5, 1.0, -2.0]))
    assert E.grad_check(bad, x, 1e-6, wide=True) > 0.1


def test_precision_context():
    assert E.default_dtype() == np.float32
    with E.precision(np.float64):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


def test_determinism_bitwise():
    def run():
        rng = np.random.default_rng(9)
        w = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
        x = Tensor(rng.normal(size=(2, 2, 8, 8)))
        y = E.reduce_mean(E.sigmoid(E.conv2d(x, w, None, ConvSpec(2, 3, 3, padding=1))))
        E.backward(y)
        return y.data.tobytes(), w.grad.tobytes()
    assert run() == run()


# -- the full finite-difference suite ---------------------------------------------

@pytest.mark.parametrize("name", sorted(gradcases.ALL))
def test_gradient_float32(name):
    assert gradcases.check(name, wide=False) < gradcases.TOL32


@pytest.mark.parametrize("name", sorted(gradcases.ALL))
def test_gradient_wide(name):
    assert gradcases.check(name, wide=True) < gradcases.TOL64
