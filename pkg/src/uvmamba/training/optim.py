"""AdamW with decoupled weight decay, and the warmup + cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls(0, [np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adamw_step(params, grads, state: AdamState, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
               wd: float = 0.01) -> AdamState:
    """Update ``params`` in place and return the advanced state.

    Weight decay multiplies each parameter by ``1 - lr * wd`` before the
    moment update, independent of the gradient. ``None`` grads count as zero.
    """
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params) or len(grads) != len(params):
        raise ValueError("params, grads and optimizer state must have equal length")
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if wd:
            p.data *= p.data.dtype.type(1.0 - lr * wd)
        if g is None:
            g = np.zeros_like(p.data)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        p.data -= (lr * update).astype(p.data.dtype, copy=False)
    return state


def lr_schedule(step: int, total_steps: int, warmup_steps: int, base_lr: float, min_lr: float = 1e-6) -> float:
    """Linear ramp from 0 to ``base_lr`` over ``warmup_steps``, then cosine down to ``min_lr``.

    Written as a convex combination so ``step == warmup_steps`` returns
    ``base_lr`` and ``step >= total_steps`` returns ``min_lr`` exactly.
    """
    if not 0 <= warmup_steps < total_steps:
        raise ValueError(f"need 0 <= warmup_steps < total_steps, got {warmup_steps}, {total_steps}")
    if not 0 < min_lr <= base_lr:
        raise ValueError(f"need 0 < min_lr <= base_lr, got {min_lr}, {base_lr}")
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    progress = min((step - warmup_steps) / (total_steps - warmup_steps), 1.0)
    w = 0.5 * (1.0 + math.cos(math.pi * progress))
    return min_lr * (1.0 - w) + base_lr * w
