"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    worst: tuple[int, tuple[int, ...]] | None = None
    message: str = ""
    per_input: list[float] = field(default_factory=list)

    # reports expose a ``pass`` key; keep dict-style access working
    def __getitem__(self, key):
        if key == "pass":
            return self.passed
        return getattr(self, key)

    def __bool__(self) -> bool:
        return self.passed


def _scalarize(out: np.ndarray, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal(out.shape)


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
    projection_seed: int = 1234,
    max_entries: int | None = None,
    entry_seed: int = 0,
) -> GradCheckReport:
    """Compare tape gradients of ``fn(*inputs)`` with central differences.

    The output is reduced to a scalar by a fixed random projection so every
    output element contributes. Relative error is
    ``|a - n| / max(1, |a|, |n|)``. ``max_entries`` limits how many entries of
    each input are perturbed (chosen at random), which keeps large checks cheap.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError("grad_check needs 64-bit inputs")
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.grad = None

    with Tape() as tape:
        out = fn(*inputs)
    if not np.all(np.isfinite(out.data)):
        return GradCheckReport(np.inf, False, message="non-finite forward output")
    proj = _scalarize(out.data, projection_seed)
    tape.backward(out, grad=proj, wrt=inputs)
    analytic = [t.grad.copy() for t in inputs]

    def objective() -> float:
        return float(np.sum(fn(*inputs).data * proj))

    rng = np.random.default_rng(entry_seed)
    worst_err, worst_at = 0.0, None
    per_input = []
    for k, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        a_flat = analytic[k].reshape(-1)
        err_k = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = objective()
            flat[i] = orig - eps
            fm = objective()
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            a = a_flat[i]
            if not (np.isfinite(num) and np.isfinite(a)):
                return GradCheckReport(np.inf, False, (k, np.unravel_index(i, t.shape)),
                                       message=f"non-finite gradient at input {k} entry {i}")
            err = abs(a - num) / max(1.0, abs(a), abs(num))
            err_k = max(err_k, err)
            if err > worst_err:
                worst_err, worst_at = err, (k, tuple(int(v) for v in np.unravel_index(i, t.shape)))
        per_input.append(float(err_k))
    passed = bool(worst_err <= tol)
    msg = "ok" if passed else f"max rel err {worst_err:.3g} at input {worst_at[0]} index {worst_at[1]}"
    return GradCheckReport(float(worst_err), passed, worst_at, msg, per_input)
