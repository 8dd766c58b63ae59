"""Network-level ops: projections, convolutions, normalization, activations, resampling.

Every function takes and returns :class:`Tensor` and registers an exact
vector-Jacobian product on the active tape. Images use NCHW layout.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf, expit

from .ops import add_macs
from .tensor import DimensionError, Tensor, as_tensor, record

__all__ = [
    "linear", "conv2d", "conv_transpose2d", "layer_norm", "activation",
    "silu", "gelu", "softplus", "sigmoid", "bilinear_sample", "bilinear_resize",
    "bilinear_corners", "conv_output_size",
]

_SQRT_HALF = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


def linear(x, w, b=None) -> Tensor:
    """``x @ w + b`` over the last axis of ``x``; ``w`` has shape (Cin, Cout)."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[1],):
            raise DimensionError(f"linear: bias {b.shape} does not match weight {w.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, w.shape[0])
    out = x2 @ w.data
    if b is not None:
        out += b.data
    add_macs(out.size * w.shape[0])

    def vjp(g):
        g2 = g.reshape(-1, w.shape[1])
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, (g2.sum(axis=0) if b.requires_grad else None)

    inputs = (x, w) if b is None else (x, w, b)
    return record(out.reshape(*lead, w.shape[1]), inputs, vjp)


# ---------------------------------------------------------------- convolution

def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _windows(xp, kh, kw, stride, ho, wo):
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def _col2im(gcols, shape_p, kh, kw, stride, ho, wo):
    """Scatter-add (B, C, Ho, Wo, kh, kw) patches into a padded (B, C, Hp, Wp) image."""
    gxp = np.zeros(shape_p, dtype=gcols.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += gcols[..., i, j]
    return gxp


def _pad(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _unpad(x, p):
    if p == 0:
        return x
    return x[:, :, p:-p, p:-p]


def _conv_forward(x, w, stride, padding, groups):
    """Returns (output, saved) for grouped cross-correlation."""
    B, C, H, W = x.shape
    Co, Cg, kh, kw = w.shape
    ho = conv_output_size(H, kh, stride, padding)
    wo = conv_output_size(W, kw, stride, padding)
    xp = _pad(x, padding)
    depthwise = Cg == 1 and groups == C and Co == C
    if depthwise:
        out = np.zeros((B, C, ho, wo), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                out += xp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] \
                    * w[None, :, 0, i, j, None, None]
        return out, (xp, None)
    win = _windows(xp, kh, kw, stride, ho, wo)  # B, C, ho, wo, kh, kw
    cog = Co // groups
    outs = []
    cols_all = []
    for gi in range(groups):
        cols = win[:, gi * Cg : (gi + 1) * Cg].transpose(0, 2, 3, 1, 4, 5).reshape(B * ho * wo, Cg * kh * kw)
        wm = w[gi * cog : (gi + 1) * cog].reshape(cog, -1)
        outs.append(cols @ wm.T)
        cols_all.append(cols)
    out = outs[0] if groups == 1 else np.concatenate(outs, axis=1)
    out = out.reshape(B, ho, wo, Co).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), (xp, cols_all)


def _conv_input_grad(g, w, in_shape, stride, padding, groups):
    B, C, H, W = in_shape
    Co, Cg, kh, kw = w.shape
    ho, wo = g.shape[2], g.shape[3]
    shape_p = (B, C, H + 2 * padding, W + 2 * padding)
    if Cg == 1 and groups == C and Co == C:
        gxp = np.zeros(shape_p, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] \
                    += g * w[None, :, 0, i, j, None, None]
        return _unpad(gxp, padding)
    cog = Co // groups
    g2 = g.transpose(0, 2, 3, 1).reshape(-1, Co)
    parts = []
    for gi in range(groups):
        wm = w[gi * cog : (gi + 1) * cog].reshape(cog, -1)
        gcols = (g2[:, gi * cog : (gi + 1) * cog] @ wm).reshape(B, ho, wo, Cg, kh, kw)
        parts.append(gcols.transpose(0, 3, 1, 2, 4, 5))
    gcols = parts[0] if groups == 1 else np.concatenate(parts, axis=1)
    return _unpad(_col2im(gcols, shape_p, kh, kw, stride, ho, wo), padding)


def _conv_weight_grad(g, saved, w_shape, stride, groups):
    xp, cols_all = saved
    Co, Cg, kh, kw = w_shape
    ho, wo = g.shape[2], g.shape[3]
    if cols_all is None:
        gw = np.empty(w_shape, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                patch = xp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride]
                gw[:, 0, i, j] = np.einsum("bchw,bchw->c", g, patch)
        return gw
    cog = Co // groups
    g2 = g.transpose(0, 2, 3, 1).reshape(-1, Co)
    parts = [(g2[:, gi * cog : (gi + 1) * cog].T @ cols_all[gi]) for gi in range(groups)]
    return np.concatenate(parts, axis=0).reshape(w_shape)


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """Grouped 2-D cross-correlation with zero padding.

    ``x``: (B, C, H, W); ``w``: (Co, C // groups, kh, kw); ``b``: (Co,).
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and weight, got {x.shape}, {w.shape}")
    B, C, H, W = x.shape
    Co, Cg, kh, kw = w.shape
    if C % groups or Co % groups or Cg != C // groups:
        raise DimensionError(f"conv2d: channels {C}->{Co} inconsistent with groups={groups} and weight {w.shape}")
    if kh > H + 2 * padding or kw > W + 2 * padding:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {H + 2 * padding}x{W + 2 * padding}")
    if stride < 1:
        raise DimensionError("conv2d: stride must be >= 1")
    out, saved = _conv_forward(x.data, w.data, stride, padding, groups)
    if b is not None:
        b = as_tensor(b)
        out += b.data[None, :, None, None]
    add_macs(out.size * Cg * kh * kw)

    def vjp(g):
        gx = _conv_input_grad(g, w.data, x.shape, stride, padding, groups) if x.requires_grad else None
        gw = _conv_weight_grad(g, saved, w.shape, stride, groups) if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, (g.sum(axis=(0, 2, 3)) if b.requires_grad else None)

    inputs = (x, w) if b is None else (x, w, b)
    return record(out, inputs, vjp)


def conv_transpose2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution, the adjoint of :func:`conv2d` with the same geometry.

    ``x``: (B, Cin, H, W); ``w``: (Cin, Cout, kh, kw). Output spatial size is
    ``(H - 1) * stride - 2 * padding + kh``.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"conv_transpose2d: input {x.shape} incompatible with weight {w.shape}")
    if stride < 1:
        raise DimensionError("conv_transpose2d: stride must be >= 1")
    B, Cin, H, W = x.shape
    _, Cout, kh, kw = w.shape
    ho = (H - 1) * stride - 2 * padding + kh
    wo = (W - 1) * stride - 2 * padding + kw
    if ho < 1 or wo < 1:
        raise DimensionError("conv_transpose2d: padding too large for input")
    out = _conv_input_grad(x.data, w.data, (B, Cout, ho, wo), stride, padding, 1)
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    add_macs(x.size * Cout * kh * kw)

    def vjp(g):
        gx_out = gw = None
        if x.requires_grad or w.requires_grad:
            gx, saved = _conv_forward(g, w.data, stride, padding, 1)
            gx_out = gx if x.requires_grad else None
            gw = _conv_weight_grad(x.data, saved, w.shape, stride, 1) if w.requires_grad else None
        if b is None:
            return gx_out, gw
        return gx_out, gw, (g.sum(axis=(0, 2, 3)) if b.requires_grad else None)

    inputs = (x, w) if b is None else (x, w, b)
    return record(out, inputs, vjp)


# -------------------------------------------------------------- normalization

def layer_norm(x, gamma, beta, eps: float = 1e-5, axis: int = -1) -> Tensor:
    """Normalize over one axis (channels), then apply the affine ``gamma``/``beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    axis = axis % x.ndim
    C = x.shape[axis]
    if C == 0:
        raise DimensionError("layer_norm over an empty channel axis")
    if gamma.shape != (C,) or beta.shape != (C,):
        raise DimensionError(f"layer_norm: gamma/beta must have shape ({C},)")
    bshape = [1] * x.ndim
    bshape[axis] = C
    gb = gamma.data.reshape(bshape)
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gb + beta.data.reshape(bshape)
    red = tuple(i for i in range(x.ndim) if i != axis)

    def vjp(g):
        gx = None
        if x.requires_grad:
            gh = g * gb
            gx = rstd * (gh - gh.mean(axis=axis, keepdims=True)
                         - xhat * (gh * xhat).mean(axis=axis, keepdims=True))
        gg = (g * xhat).sum(axis=red) if gamma.requires_grad else None
        gbeta = g.sum(axis=red) if beta.requires_grad else None
        return gx, gg, gbeta

    return record(out.astype(x.dtype, copy=False), (x, gamma, beta), vjp)


# ---------------------------------------------------------------- activations

def silu(x) -> Tensor:
    x = as_tensor(x)
    s = expit(x.data)
    out = x.data * s
    return record(out, (x,), lambda g: (g * (s + out * (1.0 - s)),))


def gelu(x) -> Tensor:
    """Exact (erf) GELU."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data * _SQRT_HALF))
    out = x.data * cdf

    def vjp(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return record(out.astype(x.dtype, copy=False), (x,), vjp)


def softplus(x) -> Tensor:
    """``ln(1 + e^x)`` evaluated without overflow."""
    x = as_tensor(x)
    out = np.logaddexp(0.0, x.data).astype(x.dtype, copy=False)
    return record(out, (x,), lambda g: (g * expit(x.data),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = expit(x.data)
    return record(s, (x,), lambda g: (g * s * (1.0 - s),))


_ACTIVATIONS = {"silu": silu, "gelu": gelu, "softplus": softplus, "sigmoid": sigmoid}


def activation(x, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}") from None
    return fn(x)


# ---------------------------------------------------------------- resampling

def bilinear_corners(rows: np.ndarray, cols: np.ndarray, H: int, W: int):
    """Neighbor indices and weights for bilinear sampling with zero padding.

    Returns a list of four ``(flat_index, weight, d_weight/d_row, d_weight/d_col)``
    tuples. Out-of-range neighbors get weight 0 (and zero derivatives) and a
    clamped, harmless index.
    """
    r0 = np.floor(rows)
    c0 = np.floor(cols)
    fr = rows - r0
    fc = cols - c0
    r0 = r0.astype(np.int64)
    c0 = c0.astype(np.int64)
    out = []
    for dr, dc in ((0, 0), (0, 1), (1, 0), (1, 1)):
        rr = r0 + dr
        cc = c0 + dc
        valid = (rr >= 0) & (rr < H) & (cc >= 0) & (cc < W)
        wr = fr if dr else 1.0 - fr
        wc = fc if dc else 1.0 - fc
        sr = 1.0 if dr else -1.0
        sc = 1.0 if dc else -1.0
        weight = np.where(valid, wr * wc, 0.0)
        d_row = np.where(valid, sr * wc, 0.0)
        d_col = np.where(valid, wr * sc, 0.0)
        idx = np.clip(rr, 0, H - 1) * W + np.clip(cc, 0, W - 1)
        out.append((idx, weight, d_row, d_col))
    return out


def bilinear_sample(fmap, points) -> Tensor:
    """Sample a (C, H, W) map at real (row, col) points; returns (C, P).

    ``points`` is a (P, 2) tensor or array. Differentiable in both the map
    values and the coordinates. Samples beyond the one-pixel border read zero.
    """
    fmap, points = as_tensor(fmap), as_tensor(points)
    if fmap.ndim != 3 or points.ndim != 2 or points.shape[1] != 2:
        raise DimensionError(f"bilinear_sample expects (C,H,W) map and (P,2) points, got {fmap.shape}, {points.shape}")
    C, H, W = fmap.shape
    flat = fmap.data.reshape(C, H * W)
    corners = bilinear_corners(points.data[:, 0], points.data[:, 1], H, W)
    out = np.zeros((C, points.shape[0]), dtype=fmap.dtype)
    gathered = []
    for idx, wgt, _, _ in corners:
        v = flat[:, idx]
        gathered.append(v)
        out += v * wgt

    def vjp(g):
        gmap = None
        if fmap.requires_grad:
            gflat = np.zeros((C, H * W), dtype=fmap.dtype)
            for idx, wgt, _, _ in corners:
                for c in range(C):
                    gflat[c] += np.bincount(idx, weights=g[c] * wgt, minlength=H * W)
            gmap = gflat.reshape(C, H, W)
        gpts = None
        if points.requires_grad:
            gpts = np.zeros(points.shape, dtype=points.dtype)
            for (idx, _, dr, dc), v in zip(corners, gathered):
                gv = (g * v).sum(axis=0)
                gpts[:, 0] += gv * dr
                gpts[:, 1] += gv * dc
        return gmap, gpts

    return record(out, (fmap, points), vjp)


def _resize_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    """Row-stochastic interpolation matrix with half-pixel centers."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m.astype(dtype)


def bilinear_resize(x, out_h: int, out_w: int) -> Tensor:
    """Resize (B, C, H, W) to (B, C, out_h, out_w); align_corners=False semantics."""
    x = as_tensor(x)
    if out_h < 1 or out_w < 1:
        raise DimensionError("bilinear_resize: output size must be >= 1")
    if x.ndim != 4:
        raise DimensionError(f"bilinear_resize expects a 4-D tensor, got {x.shape}")
    H, W = x.shape[2], x.shape[3]
    if (H, W) == (out_h, out_w):
        return record(x.data.copy(), (x,), lambda g: (g,))
    rh = _resize_matrix(H, out_h, x.dtype)
    rw = _resize_matrix(W, out_w, x.dtype)
    out = rh @ x.data @ rw.T
    add_macs(x.shape[0] * x.shape[1] * (out_h * H * W + out_h * W * out_w))

    def vjp(g):
        return (rh.T @ g @ rw,)

    return record(out, (x,), vjp)
