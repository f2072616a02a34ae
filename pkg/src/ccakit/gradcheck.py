"""Central-difference verification of analytic gradients.

Finite differences are unreliable in float32, so checks refuse anything but
float64 inputs. Callers are responsible for keeping inputs away from
non-smooth points (max-pool ties, argmax switches): the probe step is 1e-4,
so decision margins should comfortably exceed it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import DTypeError, ShapeError, Tensor


@dataclass
class GradCheckResult:
    name: str
    tolerance: float
    max_rel_err: float
    passed: bool
    per_input: list[float] = field(default_factory=list)
    failure: str | None = None

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        extra = f" ({self.failure})" if self.failure else ""
        return f"{self.name}: max rel err {self.max_rel_err:.3e} <= {self.tolerance:.0e} {status}{extra}"


def _rel_err(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1.0)
    return np.abs(a - n) / denom


def grad_check(fn: Callable[[Sequence[Tensor]], Tensor], inputs: Sequence[Tensor],
               tolerance: float = 1e-5, step: float = 1e-4,
               name: str = "op") -> GradCheckResult:
    """Compare analytic gradients of a scalar-valued closure against central differences.

    ``fn`` receives the list of leaf tensors and must rebuild its computation
    on every call (it is invoked 2N+1 times for N total input elements).
    Relative error uses max(|analytic|, |numeric|, 1) as denominator.
    """
    leaves = []
    for t in inputs:
        if t.data.dtype != np.float64:
            raise DTypeError(f"grad_check requires float64 inputs, got {t.dtype}")
        leaves.append(Tensor(t.data.copy(), requires_grad=True))

    out = fn(leaves)
    if out.size != 1:
        raise ShapeError("grad_check closure must reduce to a scalar")
    out.backward()
    analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]
    for i, g in enumerate(analytic):
        if not np.isfinite(g).all():
            bad = int(np.flatnonzero(~np.isfinite(g.reshape(-1)))[0])
            return GradCheckResult(name, tolerance, float("inf"), False,
                                   failure=f"non-finite analytic gradient at input {i}, flat index {bad}")

    per_input: list[float] = []
    worst = 0.0
    for i, leaf in enumerate(leaves):
        flat = leaf.data.reshape(-1)
        numeric = np.empty_like(flat)
        for idx in range(flat.size):
            saved = flat[idx]
            flat[idx] = saved + step
            f_plus = fn(leaves).item()
            flat[idx] = saved - step
            f_minus = fn(leaves).item()
            flat[idx] = saved
            numeric[idx] = (f_plus - f_minus) / (2.0 * step)
        if not np.isfinite(numeric).all():
            bad = int(np.flatnonzero(~np.isfinite(numeric))[0])
            return GradCheckResult(name, tolerance, float("inf"), False,
                                   failure=f"non-finite numeric gradient at input {i}, flat index {bad}")
        err = float(_rel_err(analytic[i].reshape(-1), numeric).max()) if flat.size else 0.0
        per_input.append(err)
        worst = max(worst, err)
    return GradCheckResult(name, tolerance, worst, worst <= tolerance, per_input)
