"""Finite-difference verification of analytic gradients.

Central differences are second-order accurate only where the loss is
smooth; piecewise losses (Huber) are C1 at the branch boundary, so a
coordinate whose +/-step evaluations land in different branches is
excluded and reported instead of checked.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import NumericError

# Denominator floor: below this gradient magnitude the relative criterion
# degenerates into an absolute one (~floor * tol), which is what central
# differences of an O(1) loss can honestly resolve.
REL_ERR_FLOOR = 1e-6


@dataclass
class GradCheckReport:
    passed: bool
    tol: float
    step: float
    max_rel_err: float
    worst: tuple[str, int] | None
    checked: int
    excluded: list[tuple[str, int]] = field(default_factory=list)
    per_param: dict[str, float] = field(default_factory=dict)

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"grad_check {status}: max rel err {self.max_rel_err:.3e} over {self.checked} coords "
                f"(tol {self.tol:g}, step {self.step:g}, {len(self.excluded)} boundary-excluded)")


def rel_err(a: float, b: float, floor: float = REL_ERR_FLOOR) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def grad_check(
    fn: Callable[[], Tensor | tuple[Tensor, np.ndarray]],
    params: list[tuple[str, Parameter]],
    step: float = 1e-4,
    tol: float = 1e-4,
    samples_per_param: int | None = 6,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of fn() against central finite differences.

    fn rebuilds the scalar loss from the current parameter values each call;
    it may return (loss, branch_signature) where the signature is an ndarray
    identifying active piecewise branches — coordinates whose signature
    differs between the +step and -step evaluations are boundary-excluded.
    Parameters should be float64 for the stated tolerances to be meaningful.
    """
    rng = rng or np.random.default_rng(0)

    def evaluate(need_graph: bool):
        if need_graph:
            out = fn()
        else:
            with ad.no_grad():
                out = fn()
        loss, sig = out if isinstance(out, tuple) else (out, None)
        value = float(loss.data) if isinstance(loss, Tensor) else float(loss)
        if not np.isfinite(value):
            raise NumericError(f"non-finite loss value {value} during grad check")
        return (loss, value, sig)

    for _, p in params:
        p.grad = None
    loss, _, _ = evaluate(need_graph=True)
    loss.backward()

    max_err = 0.0
    worst: tuple[str, int] | None = None
    excluded: list[tuple[str, int]] = []
    per_param: dict[str, float] = {}
    checked = 0

    for name, p in params:
        if p.grad is None:
            raise NumericError(f"parameter {name} received no gradient")
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient in parameter {name}")
        flat_value = p.data.reshape(-1)
        flat_grad = p.grad.reshape(-1)
        n = flat_value.size
        if samples_per_param is None or samples_per_param >= n:
            indices = np.arange(n)
        else:
            indices = set(rng.choice(n, size=samples_per_param, replace=False).tolist())
            indices.add(int(np.argmax(np.abs(flat_grad))))
            indices = np.array(sorted(indices))

        param_err = 0.0
        for idx in indices:
            x0 = flat_value[idx]
            flat_value[idx] = x0 + step
            _, up, sig_up = evaluate(need_graph=False)
            flat_value[idx] = x0 - step
            _, dn, sig_dn = evaluate(need_graph=False)
            flat_value[idx] = x0
            if sig_up is not None and not np.array_equal(sig_up, sig_dn):
                excluded.append((name, int(idx)))
                continue
            fd = (up - dn) / (2.0 * step)
            err = rel_err(float(flat_grad[idx]), fd)
            checked += 1
            if err > param_err:
                param_err = err
            if err > max_err:
                max_err = err
                worst = (name, int(idx))
        per_param[name] = param_err

    return GradCheckReport(
        passed=max_err < tol,
        tol=tol,
        step=step,
        max_rel_err=max_err,
        worst=worst,
        checked=checked,
        excluded=excluded,
        per_param=per_param,
    )
