"""Pointwise geometric data in the adapted chart.

For each point this module produces the inverse mass matrix, the mass
matrix, the actuation rows, and the projection onto the unactuated
complement, plus the transport coefficients that drive the kinetic
equation.  The heavy lifting happens in the numeric core; this layer
compiles model expressions to tapes once and exposes numpy views.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import numerics
from ._kernel import core
from ._kernel.tape import (
    CoreDomainError,
    CoreSingularError,
    Tape,
    compile_tape,
)
from .expr import Expr, differentiate
from .model import ModelSpec


class OutsideDomainError(Exception):
    """The point (or its stencil) left the model's validity domain."""

    def __init__(self, message, q=None):
        super().__init__(message)
        self.q = None if q is None else tuple(float(v) for v in q)


@dataclass(eq=False)
class FramePoint:
    q: tuple
    mass_inv: np.ndarray  # n x n
    mass: np.ndarray  # n x n
    proj: np.ndarray  # n x (n - m), columns span the unactuated complement
    actuation: np.ndarray  # m x n


class FrameEngine:
    """Compiled evaluators for one model chart.

    Builds tapes for the inverse mass grid, its symbolic coordinate
    derivatives, the actuation rows and their derivatives, and the
    potential gradient; the optional kinetic profile rides along for the
    kinetic solver.  Engines are cheap to evaluate and safe to share.
    """

    def __init__(
        self,
        spec: ModelSpec,
        xi: Optional[Expr] = None,
        quadspec: Optional[numerics.QuadSpec] = None,
    ):
        if spec.chart is not None:
            raise ValueError("apply the model's chart before building evaluators")
        self.spec = spec
        self.quadspec = quadspec or numerics.QuadSpec()
        n, m = spec.n, spec.m
        slots = {name: i for i, name in enumerate(spec.coords)}
        consts = dict(spec.constants)

        def tape(e: Expr) -> Tape:
            return compile_tape(e, slots, consts)

        hu = [[tape(spec.mass_inverse[i][j]) for j in range(n)] for i in range(n)]
        dhu = [
            [
                [
                    tape(differentiate(spec.mass_inverse[i][j], spec.coords[k]))
                    for k in range(n)
                ]
                for j in range(n)
            ]
            for i in range(n)
        ]
        th = [[tape(spec.actuation[a][i]) for i in range(n)] for a in range(m)]
        dth = [
            [
                [
                    tape(differentiate(spec.actuation[a][i], spec.coords[k]))
                    for k in range(n)
                ]
                for i in range(n)
            ]
            for a in range(m)
        ]
        dh = [tape(differentiate(spec.potential, spec.coords[k])) for k in range(n)]
        self._hu_tapes = hu
        self._dh_tapes = dh
        self._th_tapes = th
        q = self.quadspec
        self.core_model = core.build_model(
            n, m, hu, dhu, th, dth, dh,
            None if xi is None else tape(xi),
            q.atol, q.rtol, q.max_subdiv,
        )

    # -- raw tape views -----------------------------------------------------

    def mass_inv_at(self, q) -> np.ndarray:
        n = self.spec.n
        try:
            return np.asarray(
                [
                    [core.eval_tape(self._hu_tapes[i][j], q) for j in range(n)]
                    for i in range(n)
                ]
            )
        except CoreDomainError as exc:
            raise OutsideDomainError(f"model expressions undefined at q={tuple(q)}: {exc}", q) from None

    def actuation_at(self, q) -> np.ndarray:
        n, m = self.spec.n, self.spec.m
        try:
            return np.asarray(
                [
                    [core.eval_tape(self._th_tapes[a][i], q) for i in range(n)]
                    for a in range(m)
                ]
            )
        except CoreDomainError as exc:
            raise OutsideDomainError(f"model expressions undefined at q={tuple(q)}: {exc}", q) from None

    def potential_gradient_at(self, q) -> np.ndarray:
        try:
            return np.asarray([core.eval_tape(t, q) for t in self._dh_tapes])
        except CoreDomainError as exc:
            raise OutsideDomainError(f"model expressions undefined at q={tuple(q)}: {exc}", q) from None

    def stacked_determinant(self, q) -> float:
        """Determinant of the complementarity system; vanishes exactly
        where the validity domain ends."""
        hu = self.mass_inv_at(q)
        hl = np.linalg.inv(hu)
        stacked = np.vstack((hl[: self.spec.unactuated], self.actuation_at(q)))
        return float(np.linalg.det(stacked))

    # -- frame and transport ------------------------------------------------

    def frame_at(self, q) -> FramePoint:
        qq = tuple(float(v) for v in q)
        try:
            hu, hl, proj = core.frame(self.core_model, qq)
        except CoreSingularError:
            raise OutsideDomainError(
                f"complementarity lost at q={qq}: stacked system singular", qq
            ) from None
        except CoreDomainError as exc:
            raise OutsideDomainError(
                f"model expressions undefined at q={qq}: {exc}", qq
            ) from None
        return FramePoint(
            q=qq, mass_inv=hu, mass=hl, proj=proj, actuation=self.actuation_at(qq)
        )

    def transport_tensor(self, q) -> np.ndarray:
        """Transport coefficients of the kinetic equation, indexed
        [mu, nu, tau1, tau2, tau3] over the unactuated directions."""
        qq = tuple(float(v) for v in q)
        nm = self.spec.unactuated
        try:
            hu, hl, proj, dhl, dproj = core.frame_derivs(self.core_model, qq)
        except CoreSingularError:
            raise OutsideDomainError(
                f"complementarity lost at q={qq}: stacked system singular", qq
            ) from None
        except CoreDomainError as exc:
            raise OutsideDomainError(
                f"model expressions undefined at q={qq}: {exc}", qq
            ) from None
        hlu = hl[:nm, :]  # mass rows paired with the unactuated directions
        term1 = np.einsum("km,kbc->mbc", proj, dhl[:, :nm, :nm])
        g1 = np.einsum("mbc,nt->mntbc", term1, np.eye(nm))
        g2 = np.einsum("tim,jn,bi,cj->mntbc", dproj, proj, hlu, hlu)
        g3 = np.einsum("im,tjn,bi,cj->mntbc", proj, dproj, hlu, hlu)
        return -(g1 + g2 + g3)

    def transport_scalar(self, q) -> float:
        """Scalar transport coefficient (one degree of underactuation)."""
        if self.spec.unactuated != 1:
            raise ValueError("one degree of underactuation required")
        qq = tuple(float(v) for v in q)
        try:
            return core.g_scalar(self.core_model, qq)
        except CoreSingularError:
            raise OutsideDomainError(
                f"complementarity lost at q={qq}: stacked system singular", qq
            ) from None
        except CoreDomainError as exc:
            raise OutsideDomainError(
                f"model expressions undefined at q={qq}: {exc}", qq
            ) from None


_engines: "weakref.WeakKeyDictionary[ModelSpec, FrameEngine]" = (
    weakref.WeakKeyDictionary()
)


def engine_for(spec: ModelSpec) -> FrameEngine:
    """Shared xi-free engine for a model (compiled once per spec)."""
    eng = _engines.get(spec)
    if eng is None:
        eng = FrameEngine(spec)
        _engines[spec] = eng
    return eng


def frame_at(spec: ModelSpec, q) -> FramePoint:
    return engine_for(spec).frame_at(q)


def transport_tensor(spec: ModelSpec, q) -> np.ndarray:
    return engine_for(spec).transport_tensor(q)


def transport_scalar(spec: ModelSpec, q) -> float:
    return engine_for(spec).transport_scalar(q)
