import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from uvmamba.autodiff import DimensionError, Tape, Tensor, grad_check, ops, record
from uvmamba.autodiff import functional as F


def direct_conv(x, w, b, stride, padding, groups):
    """Six nested loops, zero padding, cross-correlation."""
    B, C, H, W = x.shape
    Co, Cg, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    out = np.zeros((B, Co, Ho, Wo))
    per = Co // groups
    for n in range(B):
        for o in range(Co):
            g = o // per
            for i in range(Ho):
                for j in range(Wo):
                    acc = b[o]
                    for c in range(Cg):
                        for u in range(kh):
                            for v in range(kw):
                                acc += w[o, c, u, v] * xp[n, g * Cg + c, i * stride + u, j * stride + v]
                    out[n, o, i, j] = acc
    return out


def test_tape_accumulates_shared_input():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with Tape() as tape:
        y = ops.sum(ops.add(ops.mul(x, x), x))
    tape.backward(y, wrt=[x])
    np.testing.assert_array_equal(x.grad, [3.0, 5.0])


def test_nothing_recorded_outside_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    y = ops.exp(x)
    assert y.is_leaf and not y.requires_grad


def test_unused_parameter_gets_zero_grad():
    a = Tensor(np.ones(2), requires_grad=True)
    b = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = ops.sum(a)
    tape.backward(y, wrt=[a, b])
    np.testing.assert_array_equal(b.grad, np.zeros(3))


def test_broadcast_gradient_is_reduced():
    a = Tensor(np.ones((4, 3)), requires_grad=True)
    b = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = ops.sum(ops.mul(a, b))
    tape.backward(y, wrt=[a, b])
    np.testing.assert_array_equal(b.grad, [4.0, 4.0, 4.0])


def test_vjp_shape_mismatch_is_reported():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = record(x.data * 2, (x,), lambda g: (g[:2],))
    with pytest.raises(DimensionError):
        tape.backward(y, grad=np.ones(3), wrt=[x])


def test_linear_examples():
    np.testing.assert_array_equal(F.linear([[1.0, 2.0]], np.eye(2), np.zeros(2)).data, [[1, 2]])
    out = F.linear([[1.0, 2.0]], np.array([[1.0, 0.0], [1.0, 1.0]]), np.array([1.0, 1.0]))
    np.testing.assert_array_equal(out.data, [[4, 3]])
    np.testing.assert_array_equal(F.linear(np.zeros((2, 3)), np.ones((3, 2)), np.array([5.0, 6.0])).data,
                                  [[5, 6], [5, 6]])


def test_linear_shape_error():
    with pytest.raises(DimensionError):
        F.linear(np.ones((2, 3)), np.ones((4, 2)))


@pytest.mark.parametrize("stride,padding,groups", [(1, 1, 1), (2, 1, 1), (1, 0, 2), (2, 2, 4), (1, 1, 4)])
def test_conv2d_matches_direct_loops(rng, stride, padding, groups):
    x = rng.standard_normal((1, 4, 5, 5))
    w = rng.standard_normal((4, 4 // groups, 3, 3))
    b = rng.standard_normal(4)
    out = F.conv2d(x, w, b, stride=stride, padding=padding, groups=groups).data
    np.testing.assert_allclose(out, direct_conv(x, w, b, stride, padding, groups), atol=1e-6)


def test_conv2d_spec_oracle_case(rng):
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    assert np.max(np.abs(F.conv2d(x, w, b, padding=1).data - direct_conv(x, w, b, 1, 1, 1))) < 1e-6


def test_conv2d_trivial_cases():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    np.testing.assert_array_equal(F.conv2d(x, np.ones((1, 1, 1, 1))).data, x)
    c = np.full((1, 1, 5, 5), 2.5)
    assert F.conv2d(c, np.ones((1, 1, 3, 3)), padding=1).data[0, 0, 2, 2] == pytest.approx(22.5)


def test_conv2d_kernel_too_large():
    with pytest.raises(DimensionError):
        F.conv2d(np.ones((1, 1, 2, 2)), np.ones((1, 1, 5, 5)))


def test_conv_transpose_examples():
    out = F.conv_transpose2d(np.ones((1, 1, 1, 1)), np.ones((1, 1, 2, 2)), stride=2)
    np.testing.assert_array_equal(out.data, np.ones((1, 1, 2, 2)))
    zero = F.conv_transpose2d(np.zeros((1, 2, 3, 3)), np.ones((2, 3, 2, 2)), np.array([1.0, 2.0, 3.0]), stride=2)
    np.testing.assert_array_equal(zero.data[0, :, 0, 0], [1, 2, 3])


@pytest.mark.parametrize("k,stride,padding", [(2, 2, 0), (3, 2, 1), (3, 1, 1), (4, 2, 1)])
def test_conv_transpose_is_adjoint_of_conv(rng, k, stride, padding):
    x = rng.standard_normal((2, 3, 4, 4))
    w = rng.standard_normal((3, 5, k, k))  # (Cin, Cout) for the transpose
    y = F.conv_transpose2d(x, w, stride=stride, padding=padding).data
    z = rng.standard_normal(y.shape)
    # conv2d with the same tensor viewed as (Cout=3, Cin=5) maps y-space back to x-space
    cz = F.conv2d(z, w, stride=stride, padding=padding).data
    assert abs(np.sum(y * z) - np.sum(x * cz)) < 1e-6 * max(1.0, abs(np.sum(y * z)))


def test_layer_norm_examples():
    out = F.layer_norm(np.array([[1.0, 3.0]]), np.ones(2), np.zeros(2), eps=1e-12).data
    np.testing.assert_allclose(out, [[-1.0, 1.0]], atol=1e-9)
    np.testing.assert_array_equal(F.layer_norm(np.full((2, 4), 7.0), np.ones(4), np.zeros(4)).data, 0.0)
    beta = np.array([0.5, -1.0, 2.0])
    out = F.layer_norm(np.random.default_rng(1).standard_normal((5, 3)), np.zeros(3), beta).data
    np.testing.assert_array_equal(out, np.broadcast_to(beta, (5, 3)))


def test_layer_norm_empty_channel():
    with pytest.raises(DimensionError):
        F.layer_norm(np.ones((2, 0)), np.ones(0), np.zeros(0))


def test_activation_values():
    assert F.silu(np.array(0.0)).data == 0.0
    assert F.gelu(np.array(0.0)).data == 0.0
    assert F.softplus(np.array(0.0)).data == pytest.approx(math.log(2), abs=1e-15)
    assert abs(float(F.softplus(np.array(30.0)).data) - 30.0) < 1e-9
    assert float(F.silu(np.array(1.0)).data) == pytest.approx(0.7310585786300049, abs=1e-12)


def test_bilinear_sample_examples():
    fmap = np.array([[[0.0, 1.0], [2.0, 3.0]]])
    assert F.bilinear_sample(fmap, np.array([[0.5, 0.5]])).data[0, 0] == pytest.approx(1.5)
    assert F.bilinear_sample(fmap, np.array([[-5.0, -5.0]])).data[0, 0] == 0.0


def test_bilinear_sample_integer_points_exact(rng):
    fmap = rng.standard_normal((3, 6, 7))
    r, c = np.meshgrid(np.arange(6), np.arange(7), indexing="ij")
    pts = np.stack([r.ravel(), c.ravel()], axis=1).astype(float)
    np.testing.assert_array_equal(F.bilinear_sample(fmap, pts).data, fmap.reshape(3, -1))


def test_bilinear_resize_examples(rng):
    x = rng.standard_normal((1, 2, 5, 6))
    np.testing.assert_allclose(F.bilinear_resize(x, 5, 6).data, x, atol=1e-7)
    const = np.full((1, 1, 3, 5), 4.25)
    np.testing.assert_allclose(F.bilinear_resize(const, 7, 2).data, 4.25, atol=1e-12)
    quad = np.array([[[[0.0, 1.0], [2.0, 3.0]]]])
    assert F.bilinear_resize(quad, 1, 1).data[0, 0, 0, 0] == pytest.approx(1.5)


def test_grad_check_flags_doubled_backward(rng):
    def bad_linear(x, w):
        out = x.data @ w.data
        return record(out, (x, w), lambda g: (2 * g @ w.data.T, 2 * x.data.T @ g))

    x, w = Tensor(rng.standard_normal((3, 4))), Tensor(rng.standard_normal((4, 2)))
    report = grad_check(bad_linear, [x, w])
    assert not report.passed
    assert report.max_rel_err == pytest.approx(0.5, abs=0.05)


def test_grad_check_passes_linear_and_silu(rng):
    x, w = Tensor(rng.standard_normal((3, 4))), Tensor(rng.standard_normal((4, 2)))
    assert grad_check(lambda x, w: F.linear(x, w), [x, w]).passed
    assert grad_check(F.silu, [Tensor(rng.standard_normal(10))]).passed


def test_grad_check_requires_float64():
    with pytest.raises(TypeError):
        grad_check(F.silu, [Tensor(np.ones(3, dtype=np.float32))])


finite = hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 5)),
                    elements=st.floats(-1e3, 1e3, allow_nan=False))


@settings(max_examples=60, deadline=None)
@given(finite)
def test_ops_stay_finite_on_bounded_inputs(x):
    outs = [F.silu(x), F.gelu(x), F.softplus(x), F.sigmoid(x), ops.softmax(x, axis=-1),
            F.layer_norm(x, np.ones(x.shape[-1]), np.zeros(x.shape[-1]))]
    for out in outs:
        assert np.all(np.isfinite(out.data))


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 4)),
                  elements=st.floats(-3, 3, allow_nan=False)))
def test_broadcast_mul_gradient_matches_finite_differences(a):
    b = np.linspace(0.5, 1.5, a.shape[-1])
    assert grad_check(lambda a, b: ops.mul(a, b), [Tensor(a.copy()), Tensor(b)]).passed
