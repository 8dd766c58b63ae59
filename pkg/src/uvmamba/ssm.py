"""Diagonal state-space machinery.

Continuous model ``h' = A h + B x``, ``y = C h`` with diagonal ``A``
(one row of state decays per channel). ``zoh_discretize`` turns it into
``h_k = Abar_k * h_{k-1} + Bbar_k * x_k``; ``ssm_scan`` runs that recurrence
and differentiates it with the reverse-time adjoint recurrence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .autodiff import functional as F
from .autodiff import ops
from .autodiff.tensor import DimensionError, Tensor, as_tensor, record, unbroadcast

__all__ = [
    "DiscreteParams", "SelectiveInputs", "SsmParams", "SelectiveProjection",
    "zoh_discretize", "ssm_scan", "selective_params", "ode_reference",
    "impulse_response", "init_a_log", "init_delta_bias", "TAYLOR_THRESHOLD",
]

# below this |delta * A| the (e^z - 1)/z factor switches to its Taylor polynomial
TAYLOR_THRESHOLD = 1e-4
# the derivative of that factor loses precision to cancellation further out
_DERIV_SERIES_THRESHOLD = 1e-2


class StepSizeError(ValueError):
    """A step size that is zero, negative or NaN reached the discretization."""


class DiscreteParams(NamedTuple):
    Abar: Tensor
    Bbar: Tensor


class SelectiveInputs(NamedTuple):
    delta: Tensor
    B: Tensor
    C: Tensor
    x: Tensor


def _phi(z: np.ndarray) -> np.ndarray:
    """(e^z - 1) / z with the removable singularity at 0 handled."""
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.expm1(z) / z
    small = np.abs(z) < TAYLOR_THRESHOLD
    if small.any():
        zs = z[small]
        out[small] = 1.0 + zs * (0.5 + zs * (1.0 / 6.0 + zs * (1.0 / 24.0)))
    return out


def _phi_prime(z: np.ndarray, abar: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """d/dz of (e^z - 1) / z, i.e. (e^z - phi) / z, with a series near 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (abar - phi) / z
    small = np.abs(z) < _DERIV_SERIES_THRESHOLD
    if small.any():
        zs = z[small]
        out[small] = 0.5 + zs * (1 / 3 + zs * (1 / 8 + zs * (1 / 30 + zs * (1 / 144 + zs * (1 / 840)))))
    return out


def zoh_discretize(A, delta, B) -> DiscreteParams:
    """Zero-order-hold discretization of a diagonal SSM.

    Shapes: ``A`` (..., D, N), ``delta`` (..., L, D), ``B`` (..., L, N);
    leading dims broadcast. Returns ``Abar = exp(delta*A)`` and
    ``Bbar = (exp(delta*A) - 1) / (delta*A) * delta * B``, both (..., L, D, N).
    """
    A, delta, B = as_tensor(A), as_tensor(delta), as_tensor(B)
    if A.ndim < 2 or delta.ndim < 2 or B.ndim < 2:
        raise DimensionError("zoh_discretize: A, delta, B need at least two dims")
    if delta.shape[-1] != A.shape[-2] or B.shape[-1] != A.shape[-1] or B.shape[-2] != delta.shape[-2]:
        raise DimensionError(f"zoh_discretize: inconsistent shapes A{A.shape} delta{delta.shape} B{B.shape}")
    if not np.all(delta.data > 0):
        raise StepSizeError("zoh_discretize: delta must be strictly positive and finite")
    a_e = A.data[..., None, :, :]
    d_e = delta.data[..., :, :, None]
    b_e = B.data[..., :, None, :]
    z = d_e * a_e
    abar = np.exp(z)
    phi = _phi(z)
    db = d_e * b_e
    bbar = phi * db
    a_shape, d_shape, b_shape = a_e.shape, d_e.shape, b_e.shape
    ops.add_macs(z.size * 3)

    def vjp_a(g):
        # Abar depends on A and delta only
        gz = g * abar
        ga = unbroadcast(gz * d_e, a_shape).reshape(A.shape) if A.requires_grad else None
        gd = unbroadcast(gz * a_e, d_shape).reshape(delta.shape) if delta.requires_grad else None
        return ga, gd, None

    def vjp_b(g):
        gz = g * _phi_prime(z, abar, phi) * db
        ga = unbroadcast(gz * d_e, a_shape).reshape(A.shape) if A.requires_grad else None
        gd = None
        if delta.requires_grad:
            gd = unbroadcast(gz * a_e + g * phi * b_e, d_shape).reshape(delta.shape)
        gb = unbroadcast(g * phi * d_e, b_shape).reshape(B.shape) if B.requires_grad else None
        return ga, gd, gb

    inputs = (A, delta, B)
    return DiscreteParams(record(abar, inputs, vjp_a), record(bbar, inputs, vjp_b))


def ssm_scan(dp: DiscreteParams, C, x) -> Tensor:
    """Run ``h_k = Abar_k * h_{k-1} + Bbar_k * x_k`` from ``h_0 = 0`` and read out
    ``y_k[d] = sum_n C_k[n] * h_k[d, n]``.

    Shapes: ``Abar``/``Bbar`` (..., L, D, N), ``C`` (..., L, N), ``x`` (..., L, D).
    """
    abar_t, bbar_t = as_tensor(dp[0]), as_tensor(dp[1])
    C, x = as_tensor(C), as_tensor(x)
    if abar_t.shape != bbar_t.shape or abar_t.ndim < 3:
        raise DimensionError(f"ssm_scan: Abar {abar_t.shape} and Bbar {bbar_t.shape} must match")
    *lead, L, D, N = abar_t.shape
    lead = tuple(lead)
    if x.shape != lead + (L, D):
        raise DimensionError(f"ssm_scan: x has shape {x.shape}, expected {lead + (L, D)}")
    if C.shape != lead + (L, N):
        raise DimensionError(f"ssm_scan: C has shape {C.shape}, expected {lead + (L, N)}")
    M = int(np.prod(lead)) if lead else 1
    dtype = abar_t.dtype

    # time-major layout so each step touches one contiguous block
    a = np.ascontiguousarray(np.moveaxis(abar_t.data.reshape(M, L, D, N), 1, 0))
    bb = np.moveaxis(bbar_t.data.reshape(M, L, D, N), 1, 0)
    xs = np.moveaxis(x.data.reshape(M, L, D), 1, 0)
    cs = np.ascontiguousarray(np.moveaxis(C.data.reshape(M, L, N), 1, 0))
    hs = bb * xs[..., None]
    for k in range(1, L):
        hs[k] += a[k] * hs[k - 1]
    y = np.matmul(hs, cs[..., None])[..., 0]
    ops.add_macs(M * L * D * N * 2)
    y_out = np.moveaxis(y, 0, 1).reshape(lead + (L, D)).astype(dtype, copy=False)

    def vjp(g):
        gy = np.moveaxis(g.reshape(M, L, D), 1, 0)
        lam = gy[..., None] * cs[:, :, None, :]
        for k in range(L - 2, -1, -1):
            lam[k] += a[k + 1] * lam[k + 1]

        def back(arr):
            return np.moveaxis(arr, 0, 1).reshape(lead + (L,) + arr.shape[2:])

        ga = gb = gc = gx = None
        if abar_t.requires_grad:
            prev = np.empty_like(hs)
            prev[0] = 0.0
            prev[1:] = hs[:-1]
            ga = back(lam * prev)
        if bbar_t.requires_grad:
            gb = back(lam * xs[..., None])
        if C.requires_grad:
            gc = back(np.matmul(gy[:, :, None, :], hs)[:, :, 0, :])
        if x.requires_grad:
            gx = back((lam * bb).sum(axis=-1))
        return ga, gb, gc, gx

    return record(y_out, (abar_t, bbar_t, C, x), vjp)


# ------------------------------------------------------------- parameterization

def init_a_log(D: int, N: int, dtype=np.float32) -> np.ndarray:
    """``a_log`` such that ``A = -exp(a_log)`` runs log-uniformly over [-1, -N] along N."""
    row = np.log(np.geomspace(1.0, float(N), N)) if N > 1 else np.zeros(1)
    return np.tile(row, (D, 1)).astype(dtype)


def init_delta_bias(D: int, rng: np.random.Generator, dt_min=1e-3, dt_max=1e-1, dtype=np.float32) -> np.ndarray:
    """Bias whose softplus lands log-uniformly in [dt_min, dt_max]."""
    dt = np.exp(rng.uniform(math.log(dt_min), math.log(dt_max), size=D))
    return (dt + np.log(-np.expm1(-dt))).astype(dtype)


@dataclass
class SsmParams:
    """Diagonal state matrix stored as ``a_log``; ``A = -exp(a_log)`` stays negative."""

    a_log: Tensor

    @property
    def D(self) -> int:
        return self.a_log.shape[-2]

    @property
    def N(self) -> int:
        return self.a_log.shape[-1]

    def A(self) -> Tensor:
        return ops.neg(ops.exp(self.a_log))


@dataclass
class SelectiveProjection:
    """Weights mapping tokens to per-token ``delta``, ``B`` and ``C``."""

    w_delta: Tensor   # (D, D)
    delta_bias: Tensor  # (D,)
    w_B: Tensor       # (D, N)
    w_C: Tensor       # (D, N)

    @classmethod
    def init(cls, D: int, N: int, rng: np.random.Generator, dtype=np.float32) -> "SelectiveProjection":
        bound = 1.0 / math.sqrt(D)
        return cls(
            Tensor(rng.uniform(-bound, bound, (D, D)).astype(dtype) * 0.1, requires_grad=True),
            Tensor(init_delta_bias(D, rng, dtype=dtype), requires_grad=True),
            Tensor(rng.uniform(-bound, bound, (D, N)).astype(dtype), requires_grad=True),
            Tensor(rng.uniform(-bound, bound, (D, N)).astype(dtype), requires_grad=True),
        )

    def tensors(self) -> list[Tensor]:
        return [self.w_delta, self.delta_bias, self.w_B, self.w_C]


def selective_params(x, proj: SelectiveProjection) -> SelectiveInputs:
    """Input-dependent ``delta = softplus(x W_delta + b)``, ``B = x W_B``, ``C = x W_C``."""
    x = as_tensor(x)
    delta = F.softplus(F.linear(x, proj.w_delta, proj.delta_bias))
    return SelectiveInputs(delta, F.linear(x, proj.w_B), F.linear(x, proj.w_C), x)


# ------------------------------------------------------------------- oracles

def ode_reference(
    A,
    B,
    C,
    x_step_fn: Callable[[float], float],
    t_end: float,
    dt: float,
    sample_times: Sequence[float] | None = None,
):
    """Integrate ``h' = A h + B x(t)``, ``y = C h`` from ``h(0) = 0`` with classical RK4.

    ``A`` may be a scalar, a vector (diagonal) or a dense (N, N) matrix. The
    input is read once per step at the step midpoint, so piecewise-constant
    inputs whose breakpoints fall on step boundaries are held exactly.
    Returns ``y(t_end)``, or the outputs at ``sample_times`` when given.
    """
    A = np.atleast_1d(np.asarray(A, dtype=np.float64))
    B = np.atleast_1d(np.asarray(B, dtype=np.float64))
    C = np.atleast_1d(np.asarray(C, dtype=np.float64))
    dense = A.ndim == 2
    if dense:
        f = lambda h, u: A @ h + B * u
    else:
        f = lambda h, u: A * h + B * u
    targets = [t_end] if sample_times is None else list(sample_times)
    h = np.zeros(B.shape[0])
    t = 0.0
    out = []
    for target in targets:
        n_steps = int(round((target - t) / dt))
        if n_steps > 0:
            step = (target - t) / n_steps
            for _ in range(n_steps):
                u = x_step_fn(t + 0.5 * step)
                k1 = f(h, u)
                k2 = f(h + 0.5 * step * k1, u)
                k3 = f(h + 0.5 * step * k2, u)
                k4 = f(h + step * k3, u)
                h = h + (step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
                t += step
        t = target
        out.append(float(C @ h))
    return out[0] if sample_times is None else np.array(out)


def impulse_response(A, delta: float, B, C, steps: int) -> np.ndarray:
    """``C . Abar^k . Bbar`` for k = 0..steps-1 (diagonal ``A``)."""
    A = np.atleast_1d(np.asarray(A, dtype=np.float64))
    B = np.atleast_1d(np.asarray(B, dtype=np.float64))
    C = np.atleast_1d(np.asarray(C, dtype=np.float64))
    z = delta * A
    abar = np.exp(z)
    bbar = _phi(z) * delta * B
    k = np.arange(steps)[:, None]
    return (C * bbar * abar ** k).sum(axis=1)
