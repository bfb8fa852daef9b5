"""Shared numeric services: linear solves, adaptive quadrature, symmetric
eigenvalue bounds, finite differences.

Matrices are plain float64 numpy arrays.  The linear solver and the
quadrature routine delegate to the active numeric core so results are
identical whether the compiled extension is present or not.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ._kernel import core
from ._kernel.tape import (
    CoreConvergenceError,
    CoreNonFiniteError,
    CoreSingularError,
)

__all__ = [
    "QuadSpec",
    "SingularMatrixError",
    "QuadratureError",
    "NonFiniteSampleError",
    "solve_linear",
    "quad",
    "min_eigen_sym",
    "fd_grad",
    "fd_hess",
]


class SingularMatrixError(Exception):
    """Linear system has no reliable solution (pivot below threshold)."""


class QuadratureError(Exception):
    """Adaptive quadrature failed: non-finite samples or budget exhausted."""


class NonFiniteSampleError(Exception):
    """A finite-difference probe returned inf or NaN."""


@dataclass(frozen=True)
class QuadSpec:
    """Quadrature policy: tolerances and the subdivision budget."""

    atol: float = 1e-10
    rtol: float = 1e-10
    max_subdiv: int = 2**14

    def __post_init__(self):
        if self.atol <= 0.0 or self.rtol <= 0.0 or self.max_subdiv < 0:
            raise ValueError("quadrature tolerances must be positive")


_DEFAULT_QUAD = QuadSpec()


def solve_linear(a, b) -> np.ndarray:
    """Solve ``a @ x = b`` for square ``a`` by partial-pivot elimination."""
    am = np.asarray(a, dtype=float)
    bv = np.asarray(b, dtype=float)
    if am.ndim != 2 or am.shape[0] != am.shape[1]:
        raise ValueError(f"matrix must be square, got shape {am.shape}")
    if bv.ndim != 1 or bv.shape[0] != am.shape[0]:
        raise ValueError(f"right-hand side has shape {bv.shape}, expected ({am.shape[0]},)")
    try:
        return core.solve(am, bv)
    except CoreSingularError as e:
        raise SingularMatrixError(str(e)) from None


def quad(f: Callable[[float], float], a: float, b: float, spec: Optional[QuadSpec] = None) -> float:
    """Adaptive Gauss-Kronrod integral of ``f`` over [a, b].

    Returns exactly 0.0 when a == b.  Raises QuadratureError when samples
    come back non-finite or the subdivision budget runs out.
    """
    s = spec or _DEFAULT_QUAD
    try:
        return core.quad(f, float(a), float(b), s.atol, s.rtol, s.max_subdiv)
    except (CoreNonFiniteError, CoreConvergenceError) as e:
        raise QuadratureError(str(e)) from None


def min_eigen_sym(mat) -> float:
    """Least eigenvalue of a symmetric matrix by cyclic Jacobi rotation.

    The input is symmetrized first, so mild asymmetry from finite
    differencing is tolerated.
    """
    a = np.array(mat, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got shape {a.shape}")
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    if n == 1:
        return float(a[0, 0])
    limit = 1e-12 * max(1.0, float(np.sqrt(np.sum(a * a))))
    for _ in range(100):
        off = math.sqrt(sum(a[p, q] ** 2 for p in range(n) for q in range(n) if p != q))
        if off <= limit:
            return float(np.min(np.diagonal(a)))
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + math.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                cp = a[:, p].copy()
                cq = a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                a[p, q] = 0.0
                a[q, p] = 0.0
    raise ArithmeticError("eigenvalue iteration failed to converge")


def _steps(q, h):
    if h is not None:
        return np.full(q.shape, float(h))
    return 1e-4 * (1.0 + np.abs(q))


def _probe(f, q):
    v = float(f(q))
    if not math.isfinite(v):
        raise NonFiniteSampleError(f"non-finite sample at {q.tolist()}")
    return v


def fd_grad(f, q, h: Optional[float] = None) -> np.ndarray:
    """Central-difference gradient with per-coordinate scaled steps."""
    q = np.asarray(q, dtype=float)
    hs = _steps(q, h)
    out = np.empty(q.shape[0])
    for i in range(q.shape[0]):
        qp = q.copy()
        qm = q.copy()
        qp[i] += hs[i]
        qm[i] -= hs[i]
        out[i] = (_probe(f, qp) - _probe(f, qm)) / (2.0 * hs[i])
    return out


def fd_hess(f, q, h: Optional[float] = None) -> np.ndarray:
    """Symmetric central-difference Hessian (3-point diagonal, 4-point
    cross terms)."""
    q = np.asarray(q, dtype=float)
    n = q.shape[0]
    hs = _steps(q, h)
    out = np.empty((n, n))
    f0 = _probe(f, q)
    for i in range(n):
        qp = q.copy()
        qm = q.copy()
        qp[i] += hs[i]
        qm[i] -= hs[i]
        out[i, i] = (_probe(f, qp) - 2.0 * f0 + _probe(f, qm)) / (hs[i] * hs[i])
    for i in range(n):
        for j in range(i + 1, n):
            qpp = q.copy()
            qpm = q.copy()
            qmp = q.copy()
            qmm = q.copy()
            qpp[i] += hs[i]
            qpp[j] += hs[j]
            qpm[i] += hs[i]
            qpm[j] -= hs[j]
            qmp[i] -= hs[i]
            qmp[j] += hs[j]
            qmm[i] -= hs[i]
            qmm[j] -= hs[j]
            v = (_probe(f, qpp) - _probe(f, qpm) - _probe(f, qmp) + _probe(f, qmm)) / (
                4.0 * hs[i] * hs[j]
            )
            out[i, j] = v
            out[j, i] = v
    return out
