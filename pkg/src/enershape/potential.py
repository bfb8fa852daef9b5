"""Potential matching: slope fields, integrability, the shaped potential,
and its positivity certificate.

The slope fields are the prescribed partial derivatives of the shaped
potential along the unactuated directions.  When their cross-derivatives
agree, the shaped potential is assembled by path quadratures, with a
quadratic well of curvature varpi imposed on the actuated slice; the
certificate decides whether the equilibrium becomes a strict minimum.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from . import numerics
from ._kernel import core
from ._kernel.tape import (
    CoreConvergenceError,
    CoreDomainError,
    CoreNonFiniteError,
    CoreSingularError,
)
from .frame import OutsideDomainError, engine_for
from .kinetic import KineticSolution, SingularSegmentError
from .model import ModelSpec


class IntegrabilityError(Exception):
    """The slope fields fail to close; no shaped potential exists."""

    def __init__(self, residual: float, tol: float):
        super().__init__(
            f"integrability residual {residual:.3e} exceeds tolerance {tol:.3e}"
        )
        self.residual = residual
        self.tol = tol


def _fast_path(solution: KineticSolution) -> bool:
    return solution.mode == "solved" and solution.unactuated == 1


def prescribed_gradient(spec: ModelSpec, solution: KineticSolution, q) -> np.ndarray:
    """Slope fields u at q: potential gradient through the projection,
    weighted by the kinetic factor."""
    qq = tuple(float(v) for v in q)
    if _fast_path(solution):
        try:
            return np.asarray([core.slope_value(solution._engine.core_model, qq)])
        except CoreConvergenceError as exc:
            if solution._segment_is_singular(qq):
                raise SingularSegmentError(
                    f"integration segment crosses a singular point at q={qq}", qq
                ) from None
            raise numerics.QuadratureError(str(exc)) from None
        except CoreSingularError:
            raise SingularSegmentError(
                f"stacked system singular on the integration segment at q={qq}", qq
            ) from None
        except CoreNonFiniteError as exc:
            raise numerics.QuadratureError(str(exc)) from None
        except CoreDomainError as exc:
            raise OutsideDomainError(
                f"model expressions undefined at q={qq}: {exc}", qq
            ) from None
    eng = engine_for(spec)
    point = eng.frame_at(qq)
    dh = eng.potential_gradient_at(qq)
    return (dh @ point.proj) @ solution(qq)


def _default_grid(spec: ModelSpec, half_width: float, points_per_axis: int):
    nm = spec.unactuated
    axis = np.linspace(-half_width, half_width, points_per_axis)
    tail = (0.0,) * spec.m
    for head in itertools.product(axis, repeat=nm):
        yield tuple(float(v) for v in head) + tail


def integrability_residual(
    spec: ModelSpec,
    solution: KineticSolution,
    grid: Optional[Iterable] = None,
    half_width: float = 0.1,
    points_per_axis: int = 9,
    step: float = 1e-4,
) -> float:
    """Worst antisymmetry of the slope Jacobian over the grid.

    Zero (to differencing error) means the slope fields are a closed
    form and the shaped potential is path-independent.  With a single
    unactuated direction the condition is vacuous and the result is 0.
    """
    nm = spec.unactuated
    if nm == 1:
        return 0.0
    points = _default_grid(spec, half_width, points_per_axis) if grid is None else grid
    worst = 0.0
    for q in points:
        qq = tuple(float(v) for v in q)
        jac = np.empty((nm, nm))
        for mu in range(nm):
            h = step * (1.0 + abs(qq[mu]))
            qp = list(qq)
            qm = list(qq)
            qp[mu] += h
            qm[mu] -= h
            jac[mu] = (
                prescribed_gradient(spec, solution, qp)
                - prescribed_gradient(spec, solution, qm)
            ) / (2.0 * h)
        for mu in range(nm):
            for nu in range(mu + 1, nm):
                worst = max(worst, abs(jac[mu, nu] - jac[nu, mu]))
    return worst


@dataclass(eq=False)
class ShapedPotential:
    """Quadrature-defined shaped potential with its well curvature."""

    spec: ModelSpec
    kinetic: KineticSolution
    varpi: float
    quadspec: numerics.QuadSpec

    def __call__(self, q) -> float:
        qq = tuple(float(v) for v in q)
        if _fast_path(self.kinetic):
            try:
                return core.shaped_value(
                    self.kinetic._engine.core_model, qq, self.varpi
                )
            except CoreConvergenceError as exc:
                raise numerics.QuadratureError(str(exc)) from None
            except CoreSingularError:
                raise SingularSegmentError(
                    f"quadrature segment leaves the validity domain at q={qq}", qq
                ) from None
            except CoreNonFiniteError as exc:
                raise numerics.QuadratureError(str(exc)) from None
            except CoreDomainError as exc:
                raise OutsideDomainError(
                    f"model expressions undefined at q={qq}: {exc}", qq
                ) from None
        nm = self.spec.unactuated
        total = 0.0
        for mu in range(nm):
            tail = qq[mu + 1 :]

            def integrand(t, _mu=mu, _tail=tail):
                point = (0.0,) * _mu + (t,) + _tail
                return float(prescribed_gradient(self.spec, self.kinetic, point)[_mu])

            total += numerics.quad(integrand, 0.0, qq[mu], self.quadspec)
        for i in range(nm, self.spec.n):
            total += 0.5 * self.varpi * qq[i] * qq[i]
        return total


@dataclass(eq=False)
class PositivityCertificate:
    """Second-order data of the shaped potential at the equilibrium."""

    m_block: np.ndarray  # unactuated Hessian block
    a_block: np.ndarray  # unactuated x actuated coupling
    lambda_min: float
    a_norm_sq: float  # squared Frobenius norm of the coupling
    varpi_min: float  # least admissible well curvature (inf when M fails)
    varpi: float
    verdict: bool
    reason: str
    hess0: np.ndarray  # assembled n x n Hessian at the origin


def positivity_certificate(
    spec: ModelSpec,
    solution: KineticSolution,
    varpi: Optional[float] = None,
    step: float = 1e-5,
) -> PositivityCertificate:
    """Decide whether the shaped potential has a strict minimum at the
    origin, and pick the well curvature when none is given."""
    nm, m, n = spec.unactuated, spec.m, spec.n
    origin = (0.0,) * n

    def u_at(point) -> np.ndarray:
        return prescribed_gradient(spec, solution, point)

    m_block = np.empty((nm, nm))
    for mu in range(nm):
        qp = list(origin)
        qm = list(origin)
        qp[mu] += step
        qm[mu] -= step
        m_block[mu] = (u_at(qp) - u_at(qm)) / (2.0 * step)
    a_block = np.empty((nm, m))
    for a in range(m):
        qp = list(origin)
        qm = list(origin)
        qp[nm + a] += step
        qm[nm + a] -= step
        a_block[:, a] = (u_at(qp) - u_at(qm)) / (2.0 * step)

    lambda_min = numerics.min_eigen_sym(m_block)
    a_norm_sq = float(np.sum(a_block * a_block))
    if lambda_min > 0.0:
        varpi_min = a_norm_sq / lambda_min
        chosen = varpi if varpi is not None else 2.0 * max(varpi_min, 1.0)
        if chosen > varpi_min:
            verdict, reason = True, "ok"
        else:
            verdict, reason = False, "varpi below the certified bound"
    else:
        varpi_min = float("inf")
        chosen = varpi if varpi is not None else 2.0
        verdict, reason = False, "M not positive-definite"

    hess0 = np.zeros((n, n))
    hess0[:nm, :nm] = m_block
    hess0[:nm, nm:] = a_block
    hess0[nm:, :nm] = a_block.T
    hess0[nm:, nm:] = chosen * np.eye(m)
    return PositivityCertificate(
        m_block=m_block,
        a_block=a_block,
        lambda_min=float(lambda_min),
        a_norm_sq=a_norm_sq,
        varpi_min=float(varpi_min),
        varpi=float(chosen),
        verdict=verdict,
        reason=reason,
        hess0=hess0,
    )


def build_shaped_potential(
    spec: ModelSpec,
    solution: KineticSolution,
    varpi: Optional[float] = None,
    integrability_tol: float = 1e-6,
    quadspec: Optional[numerics.QuadSpec] = None,
    grid: Optional[Iterable] = None,
) -> ShapedPotential:
    """Assemble the shaped potential after gating on integrability.

    When varpi is omitted the certificate's choice is used.
    """
    residual = integrability_residual(spec, solution, grid=grid)
    if residual > integrability_tol:
        raise IntegrabilityError(residual, integrability_tol)
    if varpi is None:
        varpi = positivity_certificate(spec, solution).varpi
    return ShapedPotential(
        spec=spec,
        kinetic=solution,
        varpi=float(varpi),
        quadspec=quadspec or numerics.QuadSpec(),
    )
