import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uvmamba import ssm
from uvmamba.autodiff import DimensionError, Tensor, grad_check, ops
from uvmamba.verify import memory_decay_draw, zoh_ode_draw


def scalar_zoh(A, delta, B):
    dp = ssm.zoh_discretize(np.array([[A]]), np.array([[delta]]), np.array([[B]]))
    return dp.Abar.data.item(), dp.Bbar.data.item()


def test_zoh_half_life():
    abar, bbar = scalar_zoh(-1.0, math.log(2), 1.0)
    assert abar == pytest.approx(0.5, abs=1e-15)
    assert bbar == pytest.approx(0.5, abs=1e-15)


def test_zoh_closed_form_values():
    abar, bbar = scalar_zoh(-0.5, 1.0, 2.0)
    assert abar == pytest.approx(0.6065306597126334, abs=1e-12)
    assert bbar == pytest.approx(1.5738773611494663, abs=1e-12)


def test_zoh_tiny_step_uses_euler_limit():
    abar, bbar = scalar_zoh(-1.0, 1e-9, 3.0)
    assert abar == pytest.approx(1.0, abs=1e-9)
    assert bbar == pytest.approx(3e-9, rel=1e-8)


def test_zoh_rejects_nonpositive_step():
    with pytest.raises(ssm.StepSizeError):
        ssm.zoh_discretize(np.array([[-1.0]]), np.array([[0.0]]), np.array([[1.0]]))
    with pytest.raises(ValueError):
        ssm.zoh_discretize(np.array([[-1.0]]), np.array([[-0.1]]), np.array([[1.0]]))


def test_taylor_branch_is_continuous():
    A = np.array([[-1.0]])
    t = ssm.TAYLOR_THRESHOLD
    below = ssm.zoh_discretize(A, np.array([[t * (1 - 1e-12)]]), np.array([[1.0]])).Bbar.data
    above = ssm.zoh_discretize(A, np.array([[t * (1 + 1e-12)]]), np.array([[1.0]])).Bbar.data
    assert abs((below - above).item()) < 1e-9


def test_scan_unrolled_recurrence():
    dp = ssm.DiscreteParams(Tensor(np.full((3, 1, 1), 0.5)), Tensor(np.ones((3, 1, 1))))
    y = ssm.ssm_scan(dp, np.ones((3, 1)), np.array([[1.0], [0.0], [0.0]]))
    np.testing.assert_allclose(y.data[:, 0], [1.0, 0.5, 0.25])


def test_scan_zero_input(rng):
    dp = ssm.zoh_discretize(-np.exp(rng.standard_normal((2, 3))), np.full((5, 2), 0.1), rng.standard_normal((5, 3)))
    assert np.all(ssm.ssm_scan(dp, rng.standard_normal((5, 3)), np.zeros((5, 2))).data == 0)


def test_scan_integrator_limit():
    L = 3
    dp = ssm.zoh_discretize(np.array([[-1e-9]]), np.ones((L, 1)), np.ones((L, 1)))
    y = ssm.ssm_scan(dp, np.ones((L, 1)), np.ones((L, 1))).data[:, 0]
    np.testing.assert_allclose(y, [1, 2, 3], atol=1e-8)
    ref = ssm.ode_reference(-1e-9, 1.0, 1.0, lambda t: 1.0, 3.0, dt=0.01, sample_times=[1, 2, 3])
    np.testing.assert_allclose(y, ref, atol=1e-8)


def test_scan_length_mismatch():
    dp = ssm.zoh_discretize(np.array([[-1.0]]), np.ones((4, 1)), np.ones((4, 1)))
    with pytest.raises(DimensionError):
        ssm.ssm_scan(dp, np.ones((3, 1)), np.ones((4, 1)))


def test_selective_params_examples(rng):
    D, N, L = 4, 3, 6
    proj = ssm.SelectiveProjection.init(D, N, rng, dtype=np.float64)
    x = rng.standard_normal((L, D)) * 50
    delta, B, C, _ = ssm.selective_params(x, proj)
    assert np.all(delta.data > 0)
    assert (delta.shape, B.shape, C.shape) == ((L, D), (L, N), (L, N))
    zero_bias = ssm.SelectiveProjection(proj.w_delta, Tensor(np.zeros(D)), proj.w_B, proj.w_C)
    np.testing.assert_allclose(ssm.selective_params(np.zeros((L, D)), zero_bias).delta.data, math.log(2))


def test_delta_bias_init_range(rng):
    b = ssm.init_delta_bias(256, rng, dtype=np.float64)
    dt = np.logaddexp(0, b)
    assert dt.min() >= 1e-3 - 1e-12 and dt.max() <= 1e-1 + 1e-12


def test_a_init_is_stable():
    A = -np.exp(ssm.init_a_log(3, 8, dtype=np.float64))
    np.testing.assert_allclose(A[0, [0, -1]], [-1.0, -8.0])
    assert np.all(A < 0)


def test_ode_reference_closed_form():
    assert ssm.ode_reference(-1.0, 1.0, 1.0, lambda t: 1.0, math.log(2), dt=1e-3) == pytest.approx(0.5, abs=1e-8)
    assert ssm.ode_reference(-1.0, 1.0, 1.0, lambda t: 0.0, 2.0, dt=1e-2) == 0.0


def test_ode_reference_dense_matches_diagonal():
    A = np.array([-0.5, -2.0])
    step = lambda t: math.sin(3 * t) if t < 1 else 0.3
    d = ssm.ode_reference(A, [1.0, 0.5], [0.7, -1.0], step, 2.0, dt=1e-3)
    dense = ssm.ode_reference(np.diag(A), [1.0, 0.5], [0.7, -1.0], step, 2.0, dt=1e-3)
    assert d == pytest.approx(dense, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_scan_matches_ode_oracle(seed):
    assert zoh_ode_draw(np.random.default_rng(seed)) < 1e-6


def test_scan_gradients_including_A(rng):
    L, D, N = 5, 2, 3

    def fn(a_log, delta, B, C, x):
        A = ops.neg(ops.exp(a_log))
        return ssm.ssm_scan(ssm.zoh_discretize(A, delta, B), C, x)

    inputs = [Tensor(rng.standard_normal((D, N))), Tensor(rng.uniform(0.05, 1, (L, D))),
              Tensor(rng.standard_normal((L, N))), Tensor(rng.standard_normal((L, N))),
              Tensor(rng.standard_normal((L, D)))]
    assert grad_check(fn, inputs).passed


def test_impulse_response_matches_scan():
    A, B, C, delta = np.array([-0.3, -1.2]), np.array([1.0, 0.4]), np.array([0.5, 2.0]), 0.2
    L = 8
    dp = ssm.zoh_discretize(A[None], np.full((L, 1), delta), np.tile(B, (L, 1)))
    x = np.zeros((L, 1))
    x[0] = 1.0
    y = ssm.ssm_scan(dp, np.tile(C, (L, 1)), x).data[:, 0]
    np.testing.assert_allclose(ssm.impulse_response(A, delta, B, C, L), y, atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_memory_decay_property(seed):
    ok, _ = memory_decay_draw(np.random.default_rng(seed))
    assert ok
