"""Deformable aggregation with unnormalized modulation (DCNv4 style).

For each output location ``p0`` and group ``g``::

    y_g(p0) = w_g^T  sum_k  m_gk(p0) * x_g(p0 + p_k + dp_gk(p0))

where ``p_k`` runs over a fixed square grid, ``x_g`` is the g-th channel slice
read with zero-padded bilinear interpolation, and ``w_g`` is a per-group
projection shared by all locations. Modulation is not softmax-normalized,
so the output is linear in ``m``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import functional as F
from .autodiff import ops
from .autodiff.functional import bilinear_corners
from .autodiff.tensor import DimensionError, Tensor, as_tensor, record

__all__ = ["DeformParams", "OffsetHead", "grid_offsets", "dcn_aggregate", "offset_head_forward"]


def grid_offsets(K: int) -> np.ndarray:
    """(K, 2) integer (row, col) offsets of a centered square grid, row-major."""
    side = math.isqrt(K)
    if side * side != K or side % 2 == 0:
        raise ValueError(f"K must be an odd perfect square, got {K}")
    r = side // 2
    dr, dc = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1), indexing="ij")
    return np.stack([dr.ravel(), dc.ravel()], axis=1)


@dataclass(frozen=True)
class DeformParams:
    groups: int = 4
    points: int = 9

    def __post_init__(self):
        grid_offsets(self.points)
        if self.groups < 1:
            raise ValueError("groups must be >= 1")

    @property
    def offset_channels(self) -> int:
        return 2 * self.groups * self.points

    @property
    def modulation_channels(self) -> int:
        return self.groups * self.points


def dcn_aggregate(x, offsets, modulation, w_g, G: int, K: int = 9) -> Tensor:
    """Deformable aggregation.

    ``x`` (B, C, H, W); ``offsets`` (B, 2*G*K, H, W) laid out as
    (group, point, [row, col]); ``modulation`` (B, G*K, H, W);
    ``w_g`` (G, C // G, Co_g). Returns (B, G * Co_g, H, W).
    """
    x, offsets, modulation, w_g = (as_tensor(t) for t in (x, offsets, modulation, w_g))
    B, C, H, W = x.shape
    if C % G:
        raise DimensionError(f"dcn_aggregate: {C} channels not divisible by {G} groups")
    Cg = C // G
    if offsets.shape != (B, 2 * G * K, H, W):
        raise DimensionError(f"dcn_aggregate: offsets {offsets.shape}, expected {(B, 2 * G * K, H, W)}")
    if modulation.shape != (B, G * K, H, W):
        raise DimensionError(f"dcn_aggregate: modulation {modulation.shape}, expected {(B, G * K, H, W)}")
    if w_g.ndim != 3 or w_g.shape[:2] != (G, Cg):
        raise DimensionError(f"dcn_aggregate: projection {w_g.shape}, expected ({G}, {Cg}, Co)")
    Co = w_g.shape[2]
    HW = H * W
    dtype = x.dtype

    grid = grid_offsets(K)
    pr, pc = np.divmod(np.arange(HW), W)
    base_r = (pr[None, :] + grid[:, 0:1]).astype(dtype)  # K, HW
    base_c = (pc[None, :] + grid[:, 1:2]).astype(dtype)
    off = offsets.data.reshape(B, G, K, 2, HW)
    rows = base_r + off[:, :, :, 0]
    cols = base_c + off[:, :, :, 1]
    corners = bilinear_corners(rows, cols, H, W)

    xg = x.data.reshape(B, G, Cg, HW)
    mod = modulation.data.reshape(B, G, K, HW)
    sampled = np.zeros((B, G, Cg, K, HW), dtype=dtype)
    gathered = []
    for idx, wgt, _, _ in corners:
        v = np.take_along_axis(xg, idx.reshape(B, G, 1, K * HW), axis=3).reshape(B, G, Cg, K, HW)
        gathered.append(v)
        sampled += v * wgt[:, :, None].astype(dtype, copy=False)
    agg = np.einsum("bgckp,bgkp->bgpc", sampled, mod, optimize=True)  # B, G, HW, Cg
    out = agg @ w_g.data  # B, G, HW, Co
    y = np.ascontiguousarray(out.transpose(0, 1, 3, 2)).reshape(B, G * Co, H, W)
    ops.add_macs(B * G * Cg * K * HW * 5 + B * G * HW * Cg * Co)

    def vjp(g):
        g_out = g.reshape(B, G, Co, HW).transpose(0, 1, 3, 2)  # B, G, HW, Co
        gw = (agg.transpose(0, 1, 3, 2) @ g_out).sum(axis=0) if w_g.requires_grad else None
        g_agg = g_out @ w_g.data.transpose(0, 2, 1)  # B, G, HW, Cg
        g_mod = None
        if modulation.requires_grad:
            g_mod = np.einsum("bgpc,bgckp->bgkp", g_agg, sampled, optimize=True).reshape(modulation.shape)
        need_x, need_off = x.requires_grad, offsets.requires_grad
        if not (need_x or need_off):
            return None, None, g_mod, gw
        g_s = np.einsum("bgpc,bgkp->bgckp", g_agg, mod, optimize=True)  # B, G, Cg, K, HW
        gx = goff = None
        if need_x:
            flat_base = (np.arange(B * G * Cg, dtype=np.int64) * HW).reshape(B, G, Cg, 1, 1)
            targets = np.concatenate([(flat_base + idx[:, :, None]).ravel() for idx, _, _, _ in corners])
            weights = np.concatenate([(g_s * wgt[:, :, None]).ravel() for _, wgt, _, _ in corners])
            gx = np.bincount(targets, weights=weights, minlength=B * C * HW).astype(dtype).reshape(x.shape)
        if need_off:
            goff = np.zeros((B, G, K, 2, HW), dtype=dtype)
            for (_, _, d_row, d_col), v in zip(corners, gathered):
                gv = (g_s * v).sum(axis=2)  # B, G, K, HW
                goff[:, :, :, 0] += gv * d_row
                goff[:, :, :, 1] += gv * d_col
            goff = goff.reshape(offsets.shape)
        return gx, goff, g_mod, gw

    return record(y, (x, offsets, modulation, w_g), vjp)


@dataclass
class OffsetHead:
    """3x3 convolution emitting per-location offsets and modulation scalars."""

    weight: Tensor  # (2GK + GK, C, 3, 3)
    bias: Tensor
    params: DeformParams

    @classmethod
    def init(cls, channels: int, params: DeformParams, dtype=np.float32) -> "OffsetHead":
        n_off, n_mod = params.offset_channels, params.modulation_channels
        weight = np.zeros((n_off + n_mod, channels, 3, 3), dtype=dtype)
        bias = np.concatenate([np.zeros(n_off), np.ones(n_mod)]).astype(dtype)
        return cls(Tensor(weight, requires_grad=True), Tensor(bias, requires_grad=True), params)

    def __call__(self, x) -> tuple[Tensor, Tensor]:
        return offset_head_forward(x, self.weight, self.bias, self.params)


def offset_head_forward(x, weight, bias, params: DeformParams) -> tuple[Tensor, Tensor]:
    """Returns ``(offsets, modulation)`` with shapes (B, 2GK, H, W) and (B, GK, H, W)."""
    raw = F.conv2d(x, weight, bias, stride=1, padding=1)
    n_off = params.offset_channels
    return raw[:, :n_off], raw[:, n_off:]
