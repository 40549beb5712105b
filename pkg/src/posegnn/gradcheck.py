"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Sequence

import numpy as np

from .autodiff import Tape, Tensor, backward, no_tape
from .errors import AutodiffError


@dataclass
class GradcheckReport:
    max_rel_err: float
    tol: float
    per_input: List[float] = field(default_factory=list)
    names: List[str] = field(default_factory=list)
    num_checked: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} max_rel_err={self.max_rel_err:.3e} tol={self.tol:.1e} elements={self.num_checked}"


def _evaluate(f, arrays) -> float:
    with no_tape():
        out = f(*[Tensor(a) for a in arrays])
    if out.size != 1:
        raise AutodiffError(f"gradcheck: f must return a scalar, got shape {out.shape}")
    return float(out.data.reshape(-1)[0])


def gradcheck(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
    names: Sequence[str] = (),
) -> GradcheckReport:
    """Compare tape gradients of scalar ``f(*inputs)`` to central differences.

    Error per element is ``|g_ad - g_fd| / max(1, |g_ad|, |g_fd|)``. Inputs are
    promoted to float64.
    """
    arrays = [np.array(t.data, dtype=np.float64) for t in inputs]
    base = _evaluate(f, arrays)
    if _evaluate(f, arrays) != base:
        raise AutodiffError("gradcheck: f is non-deterministic (re-evaluation mismatch)")

    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    with Tape():
        out = f(*leaves)
    backward(out)

    per_input = []
    total = 0
    for i, leaf in enumerate(leaves):
        g_ad = leaf.grad if leaf.grad is not None else np.zeros_like(arrays[i])
        g_fd = np.zeros_like(arrays[i])
        flat = arrays[i].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            fp = _evaluate(f, arrays)
            flat[j] = orig - eps
            fm = _evaluate(f, arrays)
            flat[j] = orig
            g_fd.reshape(-1)[j] = (fp - fm) / (2.0 * eps)
        denom = np.maximum(1.0, np.maximum(np.abs(g_ad), np.abs(g_fd)))
        err = np.abs(g_ad - g_fd) / denom
        per_input.append(float(err.max()) if err.size else 0.0)
        total += flat.size
    return GradcheckReport(
        max_rel_err=max(per_input) if per_input else 0.0,
        tol=tol,
        per_input=per_input,
        names=list(names) or [f"input{i}" for i in range(len(leaves))],
        num_checked=total,
    )
