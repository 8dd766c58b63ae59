"""Eight traversal orders of a 2-D grid and multi-direction scan aggregation.

Grid cells are numbered row-major (``r * W + c``). A scan order is a
permutation ``perm`` such that the k-th token of the scanned sequence is grid
cell ``perm[k]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .autodiff import ops
from .autodiff.tensor import DimensionError, Tensor, as_tensor, record
from .ssm import ssm_scan, zoh_discretize

AXES = ("horizontal", "vertical", "diagonal", "antidiagonal")
SENSES = ("forward", "backward")
# reduction order is fixed; keep it that way for bit-reproducible sums
DIRECTIONS = tuple(f"{a}-{s}" for a in AXES for s in SENSES)


@dataclass(frozen=True)
class ScanOrder:
    direction: str
    H: int
    W: int
    perm: np.ndarray

    @property
    def inverse(self) -> np.ndarray:
        return _inverse(self.perm)

    def __len__(self) -> int:
        return self.H * self.W


def _inverse(perm: np.ndarray) -> np.ndarray:
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return inv


@lru_cache(maxsize=256)
def _forward_perm(axis: str, H: int, W: int) -> np.ndarray:
    r, c = np.divmod(np.arange(H * W), W)
    if axis == "horizontal":
        perm = np.arange(H * W)
    elif axis == "vertical":
        perm = np.lexsort((r, c))
    elif axis == "antidiagonal":
        perm = np.lexsort((r, r + c))
    elif axis == "diagonal":
        perm = np.lexsort((r, r - c + W - 1))
    else:
        raise ValueError(f"unknown scan axis {axis!r}")
    perm = perm.astype(np.int64)
    perm.setflags(write=False)
    return perm


def scan_order(direction: str, H: int, W: int) -> ScanOrder:
    """Permutation for ``direction`` (e.g. ``"diagonal-backward"``) on an H x W grid.

    Forward orders: horizontal is row-major, vertical column-major,
    antidiagonal sorts by (r + c, r), diagonal by (r - c + W - 1, r).
    Each backward order is its forward order reversed.
    """
    if H < 1 or W < 1:
        raise DimensionError("scan_order: H and W must be >= 1")
    try:
        axis, sense = direction.split("-")
    except ValueError:
        raise ValueError(f"direction must look like 'axis-sense', got {direction!r}") from None
    if axis not in AXES or sense not in SENSES:
        raise ValueError(f"unknown direction {direction!r}; expected one of {DIRECTIONS}")
    perm = _forward_perm(axis, H, W)
    if sense == "backward":
        perm = perm[::-1].copy()
        perm.setflags(write=False)
    return ScanOrder(direction, H, W, perm)


def permute_tokens(x, order: ScanOrder, inverse: bool = False) -> Tensor:
    """Reorder the token axis (second to last) of ``x`` by ``order``."""
    x = as_tensor(x)
    L = x.shape[-2]
    if L != len(order):
        raise DimensionError(f"permute_tokens: {L} tokens but order covers {len(order)}")
    fwd, inv = order.perm, order.inverse
    idx, back = (inv, fwd) if inverse else (fwd, inv)
    return record(x.data[..., idx, :], (x,), lambda g: (g[..., back, :],))


def gather_directions(x, orders: Sequence[ScanOrder]) -> Tensor:
    """Stack every ordering of ``x`` (M, L, ...) into (M, P, L, ...)."""
    x = as_tensor(x)
    perms = np.stack([o.perm for o in orders])
    invs = np.stack([o.inverse for o in orders])
    if x.ndim < 2 or x.shape[1] != perms.shape[1]:
        raise DimensionError(f"gather_directions: tokens on axis 1 of {x.shape} but orders cover {perms.shape[1]}")
    out = x.data[:, perms]

    def vjp(g):
        gx = np.zeros_like(x.data)
        for p in range(len(orders)):
            gx += g[:, p][:, invs[p]]
        return (gx,)

    return record(out, (x,), vjp)


def scatter_mean(y, orders: Sequence[ScanOrder]) -> Tensor:
    """Undo each direction's ordering on (M, P, L, ...) and average over P."""
    y = as_tensor(y)
    P = len(orders)
    if y.ndim < 3 or y.shape[1] != P:
        raise DimensionError(f"scatter_mean: {y.shape} does not carry {P} directions on axis 1")
    perms = np.stack([o.perm for o in orders])
    invs = np.stack([o.inverse for o in orders])
    out = np.zeros((y.shape[0],) + y.shape[2:], dtype=y.dtype)
    for p in range(P):
        out += y.data[:, p][:, invs[p]]
    out /= P

    def vjp(g):
        return (g[:, perms] / P,)

    return record(out, (y,), vjp)


ScanFn = Callable[..., Tensor]


def multi_scan_aggregate(
    x,
    scan_fn: ScanFn,
    directions: Sequence[str] = DIRECTIONS,
    token_fields: Callable[[Tensor], tuple] | None = None,
) -> Tensor:
    """Mean over directions of ``inverse_permute(scan(permute(x)))``.

    ``x`` is (..., H, W, D). ``scan_fn(seq, *fields)`` maps a (M, P, L, D)
    batch of direction-ordered sequences to outputs of the same shape and
    must treat every sequence independently.

    ``token_fields`` optionally computes per-token tensors (each (M, L, ...))
    from the unordered tokens; they are reordered alongside ``x`` and passed
    to ``scan_fn``. Any token-wise computation commutes with reordering, so
    this gives the same result as doing the work inside ``scan_fn`` at 1/P of
    the cost.
    """
    x = as_tensor(x)
    if x.ndim < 3:
        raise DimensionError(f"multi_scan_aggregate expects (..., H, W, D), got {x.shape}")
    *lead, H, W, D = x.shape
    orders = [scan_order(d, H, W) for d in directions]
    seq = x.reshape(-1, H * W, D)
    fields = () if token_fields is None else tuple(token_fields(seq))
    y = scan_fn(gather_directions(seq, orders), *(gather_directions(f, orders) for f in fields))
    if y.shape != (seq.shape[0], len(orders), H * W, D):
        raise DimensionError(f"scan_fn returned {y.shape}, expected {(seq.shape[0], len(orders), H * W, D)}")
    return scatter_mean(y, orders).reshape(tuple(lead) + (H, W, D))


def lti_scan_fn(A, delta, B, C) -> ScanFn:
    """Scan with fixed (input-independent) parameters, shared by all directions.

    ``A`` (D, N), ``delta`` (D,), ``B`` and ``C`` (N,).
    """
    A, delta, B, C = (as_tensor(t) for t in (A, delta, B, C))

    def scan(seq: Tensor) -> Tensor:
        M, P, L, D = seq.shape
        N = B.shape[-1]
        dp = zoh_discretize(A, ops.broadcast_to(delta, (L, D)), ops.broadcast_to(B, (L, N)))
        abar = ops.broadcast_to(dp.Abar, (M, P, L, D, N))
        bbar = ops.broadcast_to(dp.Bbar, (M, P, L, D, N))
        return ssm_scan((abar, bbar), ops.broadcast_to(C, (M, P, L, N)), seq)

    return scan
