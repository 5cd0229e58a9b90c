"""Finite-difference verification of analytic gradients.

Compares tape gradients against central differences at float64.  Small
tensors are checked coordinate by coordinate; large ones are covered by a
seeded random sample of coordinates per tensor so whole models stay
checkable in seconds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GradCheckReport:
    max_rel_err: float = 0.0
    worst_param: str = ""
    worst_index: int = -1
    per_tensor: dict = field(default_factory=dict)
    coords_checked: int = 0

    def ok(self, tol):
        return self.max_rel_err < tol

    def __str__(self):
        lines = [
            f"grad check: max rel err {self.max_rel_err:.3e} "
            f"at {self.worst_param}[{self.worst_index}] "
            f"({self.coords_checked} coordinates)"
        ]
        for name, err in self.per_tensor.items():
            lines.append(f"  {name}: {err:.3e}")
        return "\n".join(lines)


def grad_check(loss_fn, named_params, h=1e-5, max_coords_per_tensor=None, seed=0):
    """Check d(loss)/d(param) for every named parameter tensor.

    ``loss_fn`` rebuilds the forward graph and returns a scalar Tensor;
    ``named_params`` is a list of (name, Tensor) at float64.  When a tensor
    has more coordinates than ``max_coords_per_tensor``, a seeded random
    subset is perturbed instead of all of them.
    """
    for name, p in named_params:
        if p.dtype != np.float64:
            raise ValueError(f"grad_check requires float64 parameters; '{name}' is {p.dtype}")
        p.zero_grad()

    loss = loss_fn()
    loss.backward()
    analytic = {}
    for name, p in named_params:
        analytic[name] = p.grad.copy() if p.grad is not None else np.zeros_like(p.data)

    rng = np.random.default_rng(seed)
    report = GradCheckReport()
    for name, p in named_params:
        size = p.data.size
        if max_coords_per_tensor is not None and size > max_coords_per_tensor:
            idxs = rng.choice(size, size=max_coords_per_tensor, replace=False)
        else:
            idxs = range(size)
        flat = p.data.reshape(-1)
        worst = 0.0
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(loss_fn().data)
            flat[i] = orig - h
            f_minus = float(loss_fn().data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = analytic[name].reshape(-1)[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
            report.coords_checked += 1
            if rel > worst:
                worst = rel
            if rel > report.max_rel_err:
                report.max_rel_err = rel
                report.worst_param = name
                report.worst_index = int(i)
        report.per_tensor[name] = worst
    return report
