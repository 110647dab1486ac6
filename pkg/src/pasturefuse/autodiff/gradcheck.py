"""Central finite-difference check of reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .rng import RngStream
from .tensor import NumericError, Tensor, no_grad


@dataclass
class GradCheckReport:
    max_rel_err: float
    tol: float
    per_param: list[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol

    def __bool__(self) -> bool:
        return self.passed


def _scalar(f: Callable[[], Tensor]) -> float:
    val = f()
    v = float(np.asarray(val.data if isinstance(val, Tensor) else val).sum())
    if not np.isfinite(v):
        raise NumericError("grad_check: objective is not finite at the probe point")
    return v


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5,
               tol: float = 1e-4, max_entries: int | None = None, rng: RngStream | None = None,
               analytic: Sequence[np.ndarray] | None = None, floor: float = 1e-6) -> GradCheckReport:
    """Compare ``f``'s reverse-mode gradients with central differences.

    ``f`` takes no arguments and reads ``params`` by closure. The error for one
    parameter is ``max|g_ad - g_fd| / max(max|g_ad|, max|g_fd|, floor * max(1, |f|))``,
    so noise in near-zero entries is judged against the parameter's gradient
    scale, and a structurally zero gradient is judged against the objective's
    magnitude. The report carries the worst value over all parameters.

    ``max_entries`` probes a random subset of each parameter (seeded by
    ``rng``). ``analytic`` overrides the reverse-mode gradients, which is how
    negative controls inject a corrupted gradient.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    for p in params:
        p.grad = None
    f0 = abs(_scalar(f))
    if analytic is None:
        out = f()
        if not np.isfinite(out.data).all():
            raise NumericError("grad_check: objective is not finite at the probe point")
        out.sum().backward() if out.size != 1 else out.backward()
        analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    rng = rng or RngStream(0, 0)
    errs = []
    with no_grad():
        for p, ga in zip(params, analytic):
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = np.sort(rng.gen.choice(flat.size, max_entries, replace=False))
            g_ad = np.asarray(ga).reshape(-1)[idx]
            g_fd = np.empty(len(idx))
            for n, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + step
                fp = _scalar(f)
                flat[i] = orig - step
                fm = _scalar(f)
                flat[i] = orig
                g_fd[n] = (fp - fm) / (2.0 * step)
            scale = max(np.abs(g_ad).max(initial=0.0), np.abs(g_fd).max(initial=0.0),
                        floor * max(1.0, f0))
            err = float(np.abs(g_ad - g_fd).max(initial=0.0) / scale)
            errs.append(err)
    for p in params:
        p.grad = None
    return GradCheckReport(max(errs, default=0.0), tol, errs)
