"""Foreground-class confusion counts and the IoU / ACC / OA summary."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..autodiff.tensor import DimensionError


class Confusion(NamedTuple):
    tp: int
    fp: int
    fn: int
    tn: int

    def __add__(self, other):
        return Confusion(*(a + b for a, b in zip(self, other)))


def confusion(pred, gt) -> Confusion:
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return Confusion(tp, fp, fn, pred.size - tp - fp - fn)


def metrics_from_confusion(c: Confusion) -> dict[str, float]:
    union = c.tp + c.fp + c.fn
    total = c.tp + c.fp + c.fn + c.tn
    return {
        # nothing predicted and nothing present counts as a perfect match
        "iou": c.tp / union if union else 1.0,
        "acc": c.tp / (c.tp + c.fn) if c.tp + c.fn else 1.0,
        "oa": (c.tp + c.tn) / total if total else 1.0,
    }


def seg_metrics(pred_mask, gt_mask) -> dict[str, float]:
    """IoU, foreground recall (``acc``) and overall pixel accuracy (``oa``)."""
    return metrics_from_confusion(confusion(pred_mask, gt_mask))
