"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import StateError, Tensor


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-3

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.errors.values())

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def __str__(self) -> str:
        lines = [f"{k}: {v:.3e}" for k, v in self.errors.items()]
        return ("PASS" if self.passed else "FAIL") + f" (tol {self.tolerance:g})\n" + "\n".join(lines)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    num = np.linalg.norm(analytic - numeric)
    den = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    return float(num / den) if den > 1e-12 else float(num)


def numeric_grad(fn: Callable[[], Tensor], arr: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Central differences of ``fn()`` w.r.t. ``arr`` (modified in place and restored)."""
    g = np.zeros_like(arr, dtype=np.float64)
    flat, gflat = arr.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = float(fn().data)
        flat[i] = old - h
        fm = float(fn().data)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def gradient_check(fn: Callable[[], Tensor], params: dict[str, Tensor],
                   tolerance: float = 1e-3, h: float = 1e-3,
                   max_entries: int | None = None, rng: np.random.Generator | None = None
                   ) -> GradCheckReport:
    """Compare backprop against central differences for each tensor in ``params``.

    ``fn`` must rebuild the scalar output from the current tensor values.  With
    ``max_entries`` set, only that many randomly chosen entries per tensor are
    perturbed (the error is then computed over that subset).
    """
    for t in params.values():
        t.requires_grad = True
        t.grad = None
    out = fn()
    if out.data.size != 1:
        raise StateError(f"gradient_check needs a scalar output, got shape {out.shape}")
    out.backward()
    report = GradCheckReport(tolerance=tolerance)
    rng = rng or np.random.default_rng(0)
    for name, t in params.items():
        analytic = np.zeros_like(t.data, dtype=np.float64) if t.grad is None else t.grad.astype(np.float64)
        flat = t.data.reshape(-1)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        else:
            idx = np.arange(flat.size)
        numeric = np.zeros(len(idx))
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            fp = float(fn().data)
            flat[i] = old - h
            fm = float(fn().data)
            flat[i] = old
            numeric[j] = (fp - fm) / (2 * h)
        report.errors[name] = relative_error(analytic.reshape(-1)[idx], numeric)
    return report
