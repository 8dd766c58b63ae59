"""Segmentation losses on top of the tensor engine."""

from __future__ import annotations

import numpy as np

from ..autodiff import ops
from ..autodiff.tensor import DimensionError, Tensor, as_tensor, record

DICE_SMOOTH = 1.0


def _check_mask(mask, shape) -> np.ndarray:
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask)
    if m.shape != tuple(shape):
        raise DimensionError(f"mask shape {m.shape} does not match {tuple(shape)}")
    return m


def cross_entropy_loss(logits, mask) -> Tensor:
    """Mean over pixels of ``-log softmax(logits)[true class]``.

    ``logits`` is (B, K, H, W); ``mask`` holds integer class ids (B, H, W).
    """
    logits = as_tensor(logits)
    if logits.ndim != 4:
        raise DimensionError(f"cross_entropy_loss expects (B, K, H, W) logits, got {logits.shape}")
    B, K, H, W = logits.shape
    labels = _check_mask(mask, (B, H, W)).astype(np.intp)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    picked = np.take_along_axis(z, labels[:, None], axis=1)[:, 0]
    n = B * H * W
    out = np.asarray((lse - picked).sum() / n, dtype=logits.dtype)

    def vjp(g):
        p = np.exp(z - lse[:, None])
        np.put_along_axis(p, labels[:, None], np.take_along_axis(p, labels[:, None], axis=1) - 1, axis=1)
        return (p * (g / n),)

    return record(out, (logits,), vjp)


def foreground_probs(logits) -> Tensor:
    """Softmax probability of class 1, shape (B, H, W)."""
    return ops.softmax(logits, axis=1)[:, 1]


def dice_loss(probs, mask, smooth: float = DICE_SMOOTH) -> Tensor:
    """``1 - (2 sum(p g) + s) / (sum p + sum g + s)`` per sample, averaged over the batch."""
    probs = as_tensor(probs)
    if probs.ndim < 2:
        raise DimensionError(f"dice_loss expects (B, ...) probabilities, got {probs.shape}")
    g = _check_mask(mask, probs.shape).astype(probs.dtype)
    axes = tuple(range(1, probs.ndim))
    inter = ops.sum(ops.mul(probs, g), axis=axes)
    denom = ops.add(ops.sum(probs, axis=axes), g.sum(axis=axes) + smooth)
    score = ops.div(ops.add(ops.mul(inter, 2.0), smooth), denom)
    return ops.mean(ops.sub(1.0, score))


def segmentation_loss(logits, mask, kind: str) -> Tensor:
    if kind == "cross_entropy":
        return cross_entropy_loss(logits, mask)
    if kind == "dice":
        return dice_loss(foreground_probs(logits), mask)
    raise ValueError(f"unknown loss {kind!r}; expected 'cross_entropy' or 'dice'")
