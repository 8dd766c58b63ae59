import numpy as np
import pytest

from uvmamba.autodiff import DimensionError, Tensor, grad_check
from uvmamba.autodiff import functional as F
from uvmamba.deform import DeformParams, OffsetHead, dcn_aggregate, grid_offsets
from uvmamba.verify import grouped_conv_loop


def test_grid_offsets_row_major():
    assert grid_offsets(1).tolist() == [[0, 0]]
    assert grid_offsets(9)[:3].tolist() == [[-1, -1], [-1, 0], [-1, 1]]
    with pytest.raises(ValueError):
        grid_offsets(8)


def test_zero_offsets_reduce_to_grouped_conv(rng):
    B, G, Cg, Co, H, W = 2, 4, 2, 3, 5, 4
    x = rng.standard_normal((B, G * Cg, H, W))
    w_g = rng.standard_normal((G, Cg, Co))
    y = dcn_aggregate(x, np.zeros((B, 2 * G * 9, H, W)), np.ones((B, G * 9, H, W)), w_g, G).data
    assert np.max(np.abs(y - grouped_conv_loop(x, w_g, 9))) < 1e-6
    # same thing expressed as a grouped conv whose kernel repeats w_g at every tap
    kernel = np.repeat(np.repeat(w_g.transpose(0, 2, 1)[..., None, None], 3, 3), 3, 4).reshape(G * Co, Cg, 3, 3)
    np.testing.assert_allclose(y, F.conv2d(x, kernel, padding=1, groups=G).data, atol=1e-12)


def test_identity_projection_is_all_ones_grouped_conv(rng):
    G, Cg = 2, 3
    x = rng.standard_normal((1, G * Cg, 4, 4))
    w_g = np.stack([np.eye(Cg)] * G)
    y = dcn_aggregate(x, np.zeros((1, 2 * G * 9, 4, 4)), np.ones((1, G * 9, 4, 4)), w_g, G).data
    ones = np.zeros((G * Cg, Cg, 3, 3))
    for o in range(G * Cg):
        ones[o, o % Cg] = 1.0
    np.testing.assert_allclose(y, F.conv2d(x, ones, padding=1, groups=G).data, atol=1e-6)


def test_zero_modulation_gives_zero(rng):
    x = rng.standard_normal((1, 4, 3, 3))
    y = dcn_aggregate(x, rng.standard_normal((1, 36, 3, 3)), np.zeros((1, 18, 3, 3)), rng.standard_normal((2, 2, 2)), 2)
    assert np.all(y.data == 0)


def test_modulation_doubling_is_exact(rng):
    x = rng.standard_normal((2, 8, 4, 5))
    off = rng.uniform(-2, 2, (2, 72, 4, 5))
    m = rng.standard_normal((2, 36, 4, 5))
    w = rng.standard_normal((4, 2, 2))
    assert np.array_equal(dcn_aggregate(x, off, 2 * m, w, 4).data, 2 * dcn_aggregate(x, off, m, w, 4).data)


def test_single_point_half_pixel_offset():
    x = np.array([[[[0.0, 1.0], [2.0, 3.0]]]])
    y = dcn_aggregate(x, np.full((1, 2, 2, 2), 0.5), np.ones((1, 1, 2, 2)), np.ones((1, 1, 1)), G=1, K=1)
    assert y.data[0, 0, 0, 0] == pytest.approx(1.5)


def test_far_offsets_sample_zero(rng):
    x = rng.standard_normal((1, 2, 3, 3))
    y = dcn_aggregate(x, np.full((1, 18, 3, 3), 50.0), np.ones((1, 9, 3, 3)), np.ones((1, 2, 2)), G=1)
    assert np.all(y.data == 0)


def test_all_four_gradients(rng):
    G, K = 2, 9
    x = Tensor(rng.standard_normal((1, 4, 3, 4)))
    off = rng.uniform(-1.4, 1.4, (1, 2 * G * K, 3, 4))
    off = Tensor(np.where(np.abs(off - np.round(off)) < 0.05, off + 0.1, off))
    m = Tensor(rng.standard_normal((1, G * K, 3, 4)))
    w = Tensor(rng.standard_normal((G, 2, 3)))
    assert grad_check(lambda *a: dcn_aggregate(*a, G, K), [x, off, m, w]).passed


def test_shape_errors(rng):
    with pytest.raises(DimensionError):
        dcn_aggregate(np.ones((1, 5, 3, 3)), np.zeros((1, 36, 3, 3)), np.ones((1, 18, 3, 3)), np.ones((2, 2, 2)), 2)
    with pytest.raises(DimensionError):
        dcn_aggregate(np.ones((1, 4, 3, 3)), np.zeros((1, 30, 3, 3)), np.ones((1, 18, 3, 3)), np.ones((2, 2, 2)), 2)


def test_fresh_offset_head(rng):
    params = DeformParams(groups=4, points=9)
    assert (params.offset_channels, params.modulation_channels) == (72, 36)
    head = OffsetHead.init(8, params, dtype=np.float64)
    off, mod = head(rng.standard_normal((2, 8, 5, 5)))
    assert off.shape == (2, 72, 5, 5) and mod.shape == (2, 36, 5, 5)
    assert np.all(off.data == 0) and np.all(mod.data == 1)
