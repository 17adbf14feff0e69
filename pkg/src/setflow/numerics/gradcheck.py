from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tape as T


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    rel_errors: dict[str, np.ndarray]
    failures: list[tuple[str, tuple, float, float]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def grad_check(f: Callable[[T.GradTape | None], object], params: dict[str, np.ndarray],
               step: float = 1e-4, tol: float = 1e-4, floor: float = 1e-6) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f`` with central differences.

    ``f(tape)`` must evaluate the scalar objective from the current contents
    of ``params`` (perturbed in place here) and record on ``tape`` when given.
    Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    tape = T.GradTape(params)
    out = f(tape)
    analytic = T.backward(tape, out)
    tape.clear()

    rel_errors, failures = {}, []
    worst, count = 0.0, 0
    for name, p in params.items():
        errs = np.zeros(p.shape)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + step
            fp = float(np.asarray(f(None)).reshape(()))
            p[idx] = orig - step
            fm = float(np.asarray(f(None)).reshape(()))
            p[idx] = orig
            num = (fp - fm) / (2.0 * step)
            a = float(analytic[name][idx])
            err = abs(a - num) / max(abs(a), abs(num), floor)
            errs[idx] = err
            if err >= tol:
                failures.append((name, idx, a, num))
        rel_errors[name] = errs
        count += p.size
        if p.size:
            worst = max(worst, float(errs.max()))
    return GradCheckReport(worst, count, rel_errors, failures)
