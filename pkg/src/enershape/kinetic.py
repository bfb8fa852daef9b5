"""Kinetic matching: solve for the shaped kinetic factor, check residuals.

With one degree of underactuation the kinetic equation collapses to a
scalar linear ODE along the first coordinate, solved by an integrating
factor: K(x, y) = xi(y) * exp(-integral of the transport coefficient
from 0 to x).  For anything else a supplied K field can be residual-
checked but not constructed.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from . import numerics
from ._kernel import core
from ._kernel.tape import (
    CoreConvergenceError,
    CoreDomainError,
    CoreNonFiniteError,
    CoreSingularError,
)
from .expr import Expr, Num, evaluate, free_names, parse
from .frame import FrameEngine, OutsideDomainError, engine_for, transport_tensor
from .model import ModelSpec


class SingularSegmentError(Exception):
    """The integration segment crosses a point where the stacked
    complementarity system is singular."""

    def __init__(self, message, q=None):
        super().__init__(message)
        self.q = None if q is None else tuple(float(v) for v in q)


def _as_xi(xi) -> Expr:
    if xi is None:
        return Num(1.0)
    if isinstance(xi, str):
        return parse(xi)
    return xi


def _require_origin(spec: ModelSpec) -> None:
    if spec.chart is not None:
        raise ValueError("apply the model's chart first")
    if any(v != 0.0 for v in spec.equilibrium):
        raise ValueError(
            "equilibrium must sit at the origin; use center_at_equilibrium"
        )


@dataclass(eq=False)
class KineticSolution:
    """Evaluator for the shaped kinetic factor K.

    ``mode`` is "solved" (integrating factor, one degree of
    underactuation) or "supplied" (expressions, residual checking only).
    """

    spec: ModelSpec
    xi: Expr
    mode: str
    validity_note: str
    _engine: Optional[FrameEngine] = field(default=None, repr=False)
    _entries: Optional[tuple] = field(default=None, repr=False)

    @property
    def unactuated(self) -> int:
        return self.spec.unactuated

    def _segment_is_singular(self, q) -> bool:
        """Probe the stacked determinant along [0, q[0]] at fixed tail."""
        eng = self._engine if self._engine is not None else engine_for(self.spec)
        x = float(q[0])
        samples = 65
        prev = None
        for k in range(samples + 1):
            t = x * k / samples
            point = (t,) + tuple(float(v) for v in q[1:])
            try:
                det = eng.stacked_determinant(point)
            except (OutsideDomainError, numerics.SingularMatrixError):
                return True
            if det == 0.0:
                return True
            if prev is not None and (det > 0.0) != (prev > 0.0):
                return True
            prev = det
        return False

    def scalar(self, q) -> float:
        """K at q for the one-degree-of-underactuation case."""
        if self.unactuated != 1:
            raise ValueError("scalar form needs one degree of underactuation")
        qq = tuple(float(v) for v in q)
        if self.mode == "solved":
            try:
                return core.kin_value(self._engine.core_model, qq)
            except CoreConvergenceError as exc:
                if self._segment_is_singular(qq):
                    raise SingularSegmentError(
                        f"integration segment [0, {qq[0]:.6g}] at tail "
                        f"{qq[1:]} crosses a singular point of the stacked system",
                        qq,
                    ) from None
                raise numerics.QuadratureError(str(exc)) from None
            except CoreSingularError:
                raise SingularSegmentError(
                    f"stacked system singular on the integration segment at q={qq}",
                    qq,
                ) from None
            except CoreNonFiniteError as exc:
                raise numerics.QuadratureError(str(exc)) from None
            except CoreDomainError as exc:
                raise OutsideDomainError(
                    f"model expressions undefined along the segment at q={qq}: {exc}",
                    qq,
                ) from None
        return float(self(qq)[0, 0])

    def __call__(self, q) -> np.ndarray:
        """K at q as a symmetric (n-m) x (n-m) matrix."""
        qq = tuple(float(v) for v in q)
        nm = self.unactuated
        if self.mode == "solved":
            return np.asarray([[self.scalar(qq)]])
        env = self.spec.env_at(qq)
        out = np.empty((nm, nm))
        for i in range(nm):
            for j in range(i, nm):
                v = evaluate(self._entries[i][j], env)
                out[i, j] = v
                out[j, i] = v
        return out


def _sample_tails(spec: ModelSpec, count: int, half_width: float):
    rng = random.Random(31415)
    for _ in range(count):
        yield tuple(rng.uniform(-half_width, half_width) for _ in range(spec.n - 1))


def solve_kinetic(
    spec: ModelSpec,
    xi: Union[Expr, str, None] = None,
    quadspec: Optional[numerics.QuadSpec] = None,
    probe_radius: float = 0.5,
) -> KineticSolution:
    """Integrating-factor solution of the kinetic equation.

    Requires one degree of underactuation (m = n-1) and a positive
    profile xi depending only on the actuated coordinates.  Evaluations
    whose integration segment crosses a singular point of the stacked
    system raise SingularSegmentError.
    """
    _require_origin(spec)
    if spec.m != spec.n - 1:
        raise ValueError(
            f"one degree of underactuation required (m = n-1), got m={spec.m}, n={spec.n}"
        )
    xi_expr = _as_xi(xi)
    allowed = set(spec.coords[1:]) | set(spec.constants)
    unknown = free_names(xi_expr) - allowed
    if unknown:
        raise ValueError(
            f"xi may depend only on the actuated coordinates; unbound {sorted(unknown)}"
        )
    consts = dict(spec.constants)
    for tail in _sample_tails(spec, 25, 0.5):
        env = dict(consts)
        env.update(zip(spec.coords[1:], tail))
        env[spec.coords[0]] = 0.0
        v = evaluate(xi_expr, env)
        if not v > 0.0:
            raise ValueError(f"xi must be positive, got {v:.6g} at tail {tail}")

    eng = FrameEngine(spec, xi=xi_expr, quadspec=quadspec)
    note = _probe_validity(eng, probe_radius)
    return KineticSolution(
        spec=spec, xi=xi_expr, mode="solved", validity_note=note, _engine=eng
    )


def _probe_validity(eng: FrameEngine, radius: float) -> str:
    """Scan the equilibrium slice for stacked-system singularities."""
    spec = eng.spec
    samples = 200
    crossings = []
    failures = 0
    prev = None
    prev_x = None
    for k in range(samples + 1):
        x = -radius + 2.0 * radius * k / samples
        q = (x,) + (0.0,) * (spec.n - 1)
        try:
            det = eng.stacked_determinant(q)
        except (OutsideDomainError, numerics.SingularMatrixError):
            failures += 1
            prev = None
            continue
        if prev is not None and (det > 0.0) != (prev > 0.0):
            crossings.append(0.5 * (prev_x + x))
        prev = det
        prev_x = x
    if not crossings and failures == 0:
        return (
            f"no stacked-system singularities detected for |q1| <= {radius:g} "
            "on the equilibrium slice"
        )
    parts = []
    if crossings:
        locs = ", ".join(f"{c:+.3f}" for c in crossings)
        parts.append(
            f"stacked-system determinant changes sign near q1 = {locs} on the "
            "equilibrium slice; evaluations whose integration segment crosses "
            "such a point raise SingularSegmentError"
        )
    if failures:
        parts.append(f"{failures} probe points were outside the expression domain")
    return "; ".join(parts)


def kinetic_from_expressions(
    spec: ModelSpec,
    entries: Mapping,
    check_positive: bool = True,
) -> KineticSolution:
    """Wrap user-supplied K entry expressions (upper triangle, keys
    ``K11``, ``K12``, ...) for residual checking."""
    _require_origin(spec)
    nm = spec.unactuated
    grid = [[None] * nm for _ in range(nm)]
    for key, value in entries.items():
        if len(key) != 3 or key[0] != "K" or not key[1:].isdigit():
            raise ValueError(f"unrecognized kinetic entry key '{key}'")
        i, j = int(key[1]) - 1, int(key[2]) - 1
        if not (0 <= i < nm and 0 <= j < nm):
            raise ValueError(f"kinetic entry '{key}' out of range for {nm} unactuated")
        node = value if not isinstance(value, str) else parse(value)
        grid[i][j] = node
    for i in range(nm):
        for j in range(i, nm):
            if grid[i][j] is None:
                if grid[j][i] is None:
                    raise ValueError(f"kinetic entry K{i + 1}{j + 1} missing")
                grid[i][j] = grid[j][i]
            grid[j][i] = grid[i][j]
    bound = set(spec.coords) | set(spec.constants)
    for i in range(nm):
        for j in range(nm):
            unknown = free_names(grid[i][j]) - bound
            if unknown:
                raise ValueError(f"kinetic entries reference unbound {sorted(unknown)}")

    sol = KineticSolution(
        spec=spec,
        xi=Num(1.0),
        mode="supplied",
        validity_note="supplied entries; no singularity scan",
        _entries=tuple(tuple(row) for row in grid),
    )
    if check_positive:
        rng = random.Random(27182)
        for _ in range(25):
            q = tuple(rng.uniform(-0.3, 0.3) for _ in range(spec.n))
            lam = numerics.min_eigen_sym(sol(q))
            if not lam > 0.0:
                raise ValueError(
                    f"supplied K is not positive-definite at q={q} "
                    f"(least eigenvalue {lam:.3e})"
                )
        note = "supplied entries; positive-definiteness sampled at 25 points"
        sol.validity_note = note
    return sol


def kinetic_residual(
    spec: ModelSpec,
    solution: KineticSolution,
    q,
    a: Optional[Sequence] = None,
    step: float = 1e-5,
) -> float:
    """Contraction of the kinetic-equation residual with direction a.

    Central differences supply the K derivative; the transport tensor is
    exact.  Zero (to differencing error) certifies a solution at q.
    """
    qq = tuple(float(v) for v in q)
    nm = spec.unactuated
    av = np.ones(nm) if a is None else np.asarray(a, dtype=float)
    if av.shape != (nm,):
        raise ValueError(f"direction must have {nm} entries")
    g = transport_tensor(spec, qq)
    kmat = solution(qq)
    dk = np.empty((nm, nm, nm))
    for t1 in range(nm):
        h = step * (1.0 + abs(qq[t1]))
        qp = list(qq)
        qm = list(qq)
        qp[t1] += h
        qm[t1] -= h
        dk[t1] = (solution(qp) - solution(qm)) / (2.0 * h)
    res = dk + np.einsum("mntbc,mn->tbc", g, kmat)
    return float(np.einsum("tbc,t,b,c->", res, av, av, av))


def kinetic_residual_scalar(
    spec: ModelSpec,
    solution: KineticSolution,
    q,
    step: float = 1e-5,
) -> float:
    """Scalar residual dK/dx + G*K for one degree of underactuation."""
    if spec.unactuated != 1:
        raise ValueError("scalar residual needs one degree of underactuation")
    qq = tuple(float(v) for v in q)
    h = step * (1.0 + abs(qq[0]))
    qp = (qq[0] + h,) + qq[1:]
    qm = (qq[0] - h,) + qq[1:]
    dk = (solution.scalar(qp) - solution.scalar(qm)) / (2.0 * h)
    eng = solution._engine if solution._engine is not None else engine_for(spec)
    return dk + eng.transport_scalar(qq) * solution.scalar(qq)
