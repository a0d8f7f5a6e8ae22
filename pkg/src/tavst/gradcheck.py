"""Central finite-difference certification of analytic gradients.

Relative error per coordinate is |g_a - g_n| / max(1, |g_a|, |g_n|). Large
tensors are spot-checked on at least 64 randomly sampled coordinates each;
small tensors are checked in full. Certification demands verify precision:
float32 rounding swamps the O(eps^2) truncation error of the central
difference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, no_grad

MIN_COORDS_PER_TENSOR = 64


class CertificationError(RuntimeError):
    """Gradient certification could not be carried out."""


@dataclass
class CoordCheck:
    tensor: str
    index: int
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    label: str
    eps: float
    tol: float
    passed: bool
    worst_per_tensor: list[CoordCheck] = field(default_factory=list)

    def worst(self) -> CoordCheck:
        return max(self.worst_per_tensor, key=lambda c: c.rel_error)

    def __str__(self) -> str:
        lines = [
            f"gradient check: {self.label} (eps={self.eps:g}, tol={self.tol:g})"
        ]
        for c in self.worst_per_tensor:
            status = "ok  " if c.rel_error <= self.tol else "FAIL"
            lines.append(
                f"  {status} {c.tensor:<24s} coord {c.index:<6d} "
                f"analytic {c.analytic:+.6e}  numeric {c.numeric:+.6e}  "
                f"rel {c.rel_error:.3e}"
            )
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def _named_tensors(params) -> list[tuple[str, Tensor]]:
    if hasattr(params, "items"):
        return sorted(params.items())
    raise TypeError("params must provide .items() of (name, Tensor)")


def grad_check(f, params, eps: float = 1e-5, tol: float = 1e-4,
               coords_per_tensor: int = MIN_COORDS_PER_TENSOR,
               seed: int = 0, label: str = "loss") -> GradCheckReport:
    """Compare f's analytic gradients against central differences.

    f rebuilds the forward computation from the current parameter values and
    returns a scalar Tensor. Coordinates are perturbed in place by +/-eps.
    """
    tensors = _named_tensors(params)
    for name, t in tensors:
        if t.data.dtype != np.float64:
            raise CertificationError(
                f"verify precision required: {name} is {t.data.dtype}, not float64"
            )
    for _, t in tensors:
        t.zero_grad()
    loss = f()
    value = loss.item()
    if not np.isfinite(value):
        raise CertificationError(f"non-finite loss while certifying {label}: {value}")
    loss.backward()
    analytic = {name: t.grad.copy() for name, t in tensors}

    rng = np.random.default_rng(seed)
    k = max(MIN_COORDS_PER_TENSOR, coords_per_tensor)
    worst_per_tensor = []
    passed = True
    for name, t in tensors:
        flat = t.data.reshape(-1)
        size = flat.size
        if size <= k:
            indices = np.arange(size)
        else:
            indices = np.sort(rng.choice(size, size=k, replace=False))
        ana_flat = analytic[name].reshape(-1)
        worst = None
        for i in indices:
            saved = flat[i]
            with no_grad():
                flat[i] = saved + eps
                lo_hi = f().item()
                flat[i] = saved - eps
                lo_lo = f().item()
            flat[i] = saved
            if not (np.isfinite(lo_hi) and np.isfinite(lo_lo)):
                raise CertificationError(
                    f"non-finite loss while certifying {label} at {name}[{i}]"
                )
            numeric = (lo_hi - lo_lo) / (2.0 * eps)
            ana = float(ana_flat[i])
            rel = abs(ana - numeric) / max(1.0, abs(ana), abs(numeric))
            if worst is None or rel > worst.rel_error:
                worst = CoordCheck(name, int(i), ana, float(numeric), float(rel))
        worst_per_tensor.append(worst)
        if worst.rel_error > tol:
            passed = False
    return GradCheckReport(label=label, eps=eps, tol=tol, passed=passed,
                           worst_per_tensor=worst_per_tensor)
