"""Central finite-difference gradient checking.

Runs in double precision only: FD truncation is O(eps^2), so float32
round-off would swamp the comparison.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, Tape, backward


@dataclass
class GradCheckReport:
    name: str
    max_rel_err: float
    tol: float
    passed: bool
    # (flat coordinate, analytic, numeric, rel err) for every failing coordinate
    failures: list[tuple[int, float, float, float]] = field(default_factory=list)

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        line = f"{self.name}: {status} (max rel err {self.max_rel_err:.3e}, tol {self.tol:.1e})"
        if self.failures:
            c, a, n, r = self.failures[0]
            line += f"; first failure at coord {c}: analytic {a:.6e} vs numeric {n:.6e} (rel {r:.3e})"
        return line


def _rel_err(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    return np.abs(a - n) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))


def grad_check(f, x: Tensor, eps: float = 1e-4, tol: float = 1e-5,
               name: str = "f") -> GradCheckReport:
    """Compare the analytic gradient of scalar-valued ``f`` at ``x`` to
    central differences, coordinate by coordinate."""
    if x.data.dtype != np.float64:
        raise ValueError("grad_check requires a float64 input tensor")
    x.requires_grad = True
    x.grad = None
    with Tape() as tape:
        loss = f(x)
        backward(loss, tape)
    analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)

    flat = x.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x).item()
        flat[i] = orig - eps
        fm = f(x).item()
        flat[i] = orig
        numeric[i] = (fp - fm) / (2.0 * eps)

    rel = _rel_err(analytic.reshape(-1), numeric)
    failures = [
        (int(i), float(analytic.reshape(-1)[i]), float(numeric[i]), float(rel[i]))
        for i in np.nonzero(rel > tol)[0]
    ]
    max_err = float(rel.max()) if rel.size else 0.0
    return GradCheckReport(name=name, max_rel_err=max_err, tol=tol,
                           passed=not failures, failures=failures)


def grad_check_params(forward, params: dict[str, Tensor], eps: float = 1e-4,
                      tol: float = 1e-5) -> list[GradCheckReport]:
    """FD-check ``forward()`` (a closure producing a scalar Tensor) against
    the analytic gradient of every parameter in ``params``."""
    for p in params.values():
        if p.data.dtype != np.float64:
            raise ValueError("grad_check_params requires float64 parameters")
        p.grad = None
    with Tape() as tape:
        loss = forward()
        backward(loss, tape)
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}

    reports = []
    for name, p in params.items():
        flat = p.data.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = forward().item()
            flat[i] = orig - eps
            fm = forward().item()
            flat[i] = orig
            numeric[i] = (fp - fm) / (2.0 * eps)
        rel = _rel_err(analytic[name].reshape(-1), numeric)
        failures = [
            (int(i), float(analytic[name].reshape(-1)[i]), float(numeric[i]), float(rel[i]))
            for i in np.nonzero(rel > tol)[0]
        ]
        reports.append(GradCheckReport(
            name=name, max_rel_err=float(rel.max()) if rel.size else 0.0,
            tol=tol, passed=not failures))
    return reports
