import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uvmamba import ssm
from uvmamba.autodiff import DimensionError, Tensor, grad_check
from uvmamba.scan_paths import (
    DIRECTIONS,
    lti_scan_fn,
    multi_scan_aggregate,
    permute_tokens,
    scan_order,
)


def brute_force_order(direction, H, W):
    cells = [(r, c) for r in range(H) for c in range(W)]
    axis, sense = direction.split("-")
    key = {
        "horizontal": lambda rc: (rc[0], rc[1]),
        "vertical": lambda rc: (rc[1], rc[0]),
        "diagonal": lambda rc: (rc[0] - rc[1], rc[0]),
        "antidiagonal": lambda rc: (rc[0] + rc[1], rc[0]),
    }[axis]
    order = [r * W + c for r, c in sorted(cells, key=key)]
    return order if sense == "forward" else order[::-1]


def test_small_examples():
    assert list(scan_order("horizontal-forward", 2, 2).perm) == [0, 1, 2, 3]
    assert list(scan_order("vertical-forward", 2, 2).perm) == [0, 2, 1, 3]
    assert list(scan_order("antidiagonal-forward", 3, 3).perm) == [0, 1, 3, 2, 4, 6, 5, 7, 8]


@pytest.mark.parametrize("direction", DIRECTIONS)
@pytest.mark.parametrize("H,W", [(1, 1), (1, 5), (4, 1), (3, 4), (5, 5), (6, 3)])
def test_orders_match_brute_force(direction, H, W):
    assert list(scan_order(direction, H, W).perm) == brute_force_order(direction, H, W)


def test_permute_examples(rng):
    x = rng.standard_normal((4, 3))
    np.testing.assert_array_equal(permute_tokens(x, scan_order("horizontal-forward", 2, 2)).data, x)
    a, b, c, d = x
    np.testing.assert_array_equal(permute_tokens(x, scan_order("vertical-forward", 2, 2)).data, [a, c, b, d])


def test_permute_length_mismatch():
    with pytest.raises(DimensionError):
        permute_tokens(np.ones((5, 2)), scan_order("horizontal-forward", 2, 2))


def _lti(D, N, rng):
    return lti_scan_fn(-np.exp(rng.standard_normal((D, N))), rng.uniform(0.1, 0.8, D),
                       rng.standard_normal(N), rng.standard_normal(N))


def test_single_token_grid_equals_plain_scan(rng):
    D, N = 3, 2
    A = -np.exp(rng.standard_normal((D, N)))
    delta, B, C = rng.uniform(0.1, 0.8, D), rng.standard_normal(N), rng.standard_normal(N)
    x = rng.standard_normal((2, 1, 1, D))
    y = multi_scan_aggregate(x, lti_scan_fn(A, delta, B, C)).data
    dp = ssm.zoh_discretize(A, delta[None], B[None])
    ref = np.stack([ssm.ssm_scan(dp, C[None], x[i].reshape(1, D)).data[0] for i in range(2)])
    np.testing.assert_allclose(y.reshape(2, D), ref, atol=1e-14)


def test_zero_input_gives_zero(rng):
    assert np.all(multi_scan_aggregate(np.zeros((1, 3, 4, 2)), _lti(2, 3, rng)).data == 0)


def test_direction_order_does_not_matter(rng):
    x = rng.standard_normal((2, 4, 5, 3))
    fn = _lti(3, 2, rng)
    y = multi_scan_aggregate(x, fn).data
    shuffled = tuple(rng.permutation(DIRECTIONS))
    np.testing.assert_allclose(multi_scan_aggregate(x, fn, directions=shuffled).data, y, atol=1e-6)


def test_half_turn_equivariance(rng):
    # a half turn maps each direction onto the opposite sense of the same axis
    x = rng.standard_normal((1, 3, 3, 2))
    fn = _lti(2, 3, rng)
    rot = lambda a: a[:, ::-1, ::-1]
    np.testing.assert_allclose(multi_scan_aggregate(rot(x), fn).data, rot(multi_scan_aggregate(x, fn).data),
                               atol=1e-12)


def test_horizontal_flip_swaps_diagonal_families(rng):
    # raster rows reverse under a mirror, so only the two diagonal families pair up
    x = rng.standard_normal((1, 3, 3, 2))
    fn = _lti(2, 3, rng)
    flip = lambda a: a[:, :, ::-1]
    diag = ("diagonal-forward", "diagonal-backward")
    anti = ("antidiagonal-forward", "antidiagonal-backward")
    np.testing.assert_allclose(multi_scan_aggregate(flip(x), fn, directions=diag).data,
                               flip(multi_scan_aggregate(x, fn, directions=anti).data), atol=1e-12)


def test_token_fields_match_inline_computation(rng):
    D, N = 3, 2
    proj = ssm.SelectiveProjection.init(D, N, rng, dtype=np.float64)
    A = -np.exp(rng.standard_normal((D, N)))

    def inline(seq):
        delta, B, C, _ = ssm.selective_params(seq, proj)
        return ssm.ssm_scan(ssm.zoh_discretize(A, delta, B), C, seq)

    def fields(tokens):
        delta, B, C, _ = ssm.selective_params(tokens, proj)
        return (*ssm.zoh_discretize(A, delta, B), C)

    x = rng.standard_normal((2, 3, 4, D))
    a = multi_scan_aggregate(x, inline).data
    b = multi_scan_aggregate(x, lambda s, ab, bb, c: ssm.ssm_scan((ab, bb), c, s), token_fields=fields).data
    np.testing.assert_allclose(a, b, atol=1e-13)


def test_aggregate_gradient(rng):
    fn = _lti(2, 3, rng)
    assert grad_check(lambda x: multi_scan_aggregate(x, fn), [Tensor(rng.standard_normal((2, 3, 4, 2)))]).passed


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 16), st.integers(1, 16), st.sampled_from(DIRECTIONS))
def test_inverse_round_trip(H, W, direction):
    order = scan_order(direction, H, W)
    x = np.random.default_rng(H * 31 + W).standard_normal((2, H * W, 3))
    back = permute_tokens(permute_tokens(x, order), order, inverse=True).data
    assert np.array_equal(back, x)
    assert np.array_equal(order.perm[order.inverse], np.arange(H * W))
