"""Central finite-difference verification of analytic gradients."""
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckError


@dataclass
class GradcheckReport:
    max_rel_error: float
    tol: float
    per_input: list = field(default_factory=list)

    @property
    def passed(self):
        return self.max_rel_error < self.tol


def relative_error(analytic, numeric, floor=1e-6):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``.

    Below ``floor`` the comparison is effectively absolute, so exact zeros on
    both sides count as agreement.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def gradcheck(f, inputs, h=1e-5, tol=1e-4, floor=1e-6):
    """Compare backprop gradients of scalar ``f(*inputs)`` against central differences.

    Every coordinate of every input is perturbed; values are restored afterwards.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    for x in inputs:
        x.grad = None
    out = f(*inputs)
    if out.value.size != 1:
        raise ValueError("gradcheck needs a scalar-valued function")
    if not np.isfinite(out.value).all():
        raise CheckError("function value is not finite")
    out.backward()
    analytic = [np.zeros(x.shape) if x.grad is None else x.grad.copy() for x in inputs]

    report = GradcheckReport(0.0, tol)
    for x, a in zip(inputs, analytic):
        original = x.value
        work = original.copy()
        x.value = work
        numeric = np.empty(x.shape)
        flat = work.reshape(-1)
        for i in range(flat.size):
            base = flat[i]
            flat[i] = base + h
            fp = float(f(*inputs).value)
            flat[i] = base - h
            fm = float(f(*inputs).value)
            flat[i] = base
            if not (np.isfinite(fp) and np.isfinite(fm)):
                x.value = original
                raise CheckError(f"non-finite value while perturbing coordinate {i}")
            numeric.reshape(-1)[i] = (fp - fm) / (2.0 * h)
        x.value = original
        err = float(relative_error(a, numeric, floor).max()) if a.size else 0.0
        report.per_input.append(err)
        report.max_rel_error = max(report.max_rel_error, err)
    return report
