"""Compiled core against the pure reference, operation for operation.

Both backends implement one algorithm with the same panel ordering and
pivot rules, so results should agree to the last few bits.  5e-13 gives
slack for the C compiler reassociating an expression or two.
"""

import math
import random

import numpy as np
import pytest

from enershape import cli, model
from enershape._kernel import _purecore, tape
from enershape.expr import differentiate, parse
from enershape.kinetic import solve_kinetic

from conftest import FLAT3_TEXT, prepare, sample_box

_fastcore = pytest.importorskip(
    "enershape._kernel._fastcore", reason="compiled core not built"
)

CORES = (_purecore, _fastcore)
TOL = 5e-13


def build_core_models(spec, xi=None, max_subdiv=2**14):
    """One CoreModel per backend from a shared tape set."""
    n, m = spec.n, spec.m
    slots = {name: i for i, name in enumerate(spec.coords)}
    consts = dict(spec.constants)

    def t(e):
        return tape.compile_tape(e, slots, consts)

    hu = [[t(spec.mass_inverse[i][j]) for j in range(n)] for i in range(n)]
    dhu = [
        [
            [t(differentiate(spec.mass_inverse[i][j], c)) for c in spec.coords]
            for j in range(n)
        ]
        for i in range(n)
    ]
    th = [[t(spec.actuation[a][i]) for i in range(n)] for a in range(m)]
    dth = [
        [[t(differentiate(spec.actuation[a][i], c)) for c in spec.coords] for i in range(n)]
        for a in range(m)
    ]
    dh = [t(differentiate(spec.potential, c)) for c in spec.coords]
    xi_tape = None if xi is None else t(parse(xi))
    return [
        core.build_model(n, m, hu, dhu, th, dth, dh, xi_tape, 1e-10, 1e-10, max_subdiv)
        for core in CORES
    ]


@pytest.fixture(scope="module")
def pend_pair(pendulum):
    return pendulum, build_core_models(pendulum)


@pytest.fixture(scope="module")
def flat3_pair():
    spec = prepare(model.parse_model_text(FLAT3_TEXT, name="flat3"))
    return spec, build_core_models(spec)


def test_backend_names():
    assert _purecore.backend_name() == "pure"
    assert _fastcore.backend_name() == "compiled"


def test_selected_backend_is_the_compiled_one():
    from enershape._kernel import core, get_backend

    assert core is _fastcore
    assert get_backend() == "compiled"


class TestTapeEvaluation:
    EXPRS = [
        "1 + x*y - z^2",
        "sin(x)*cos(y) + tan(0.3*z)",
        "exp(-x^2) * log(2 + y)",
        "sqrt(1 + x^2 + z^2) / (2 + abs(y))",
        "x^y",
        "-x + 2^z",
    ]

    def test_values_match(self):
        slots = {"x": 0, "y": 1, "z": 2}
        rng = random.Random(61)
        for text in self.EXPRS:
            tp = tape.compile_tape(parse(text), slots, {})
            for _ in range(25):
                q = tuple(rng.uniform(0.1, 0.9) for _ in range(3))
                a = _purecore.eval_tape(tp, q)
                b = _fastcore.eval_tape(tp, q)
                assert b == pytest.approx(a, rel=TOL, abs=TOL)

    def test_domain_errors_match(self):
        slots = {"x": 0}
        for text, bad in [("log(x)", -1.0), ("sqrt(x)", -2.0), ("1/x", 0.0)]:
            tp = tape.compile_tape(parse(text), slots, {})
            for core in CORES:
                with pytest.raises(tape.CoreDomainError):
                    core.eval_tape(tp, (bad,))


class TestLinearSolve:
    def test_solutions_are_bit_compatible(self):
        rng = np.random.default_rng(67)
        for n in (2, 3, 5, 8):
            a = rng.normal(size=(n, n)) + n * np.eye(n)
            b = rng.normal(size=n)
            xp = _purecore.solve(a, b)
            xc = _fastcore.solve(a, b)
            assert np.max(np.abs(np.asarray(xp) - np.asarray(xc))) <= TOL

    def test_singular_raises_in_both(self):
        a = np.array([[1.0, 2.0], [0.5, 1.0]])
        b = np.array([1.0, 1.0])
        for core in CORES:
            with pytest.raises(tape.CoreSingularError):
                core.solve(a, b)


class TestQuadrature:
    def test_degree_thirteen_is_captured_by_one_panel(self):
        # the embedded 7-point Gauss rule is exact through degree 13
        coeffs = [0.3, -1.2, 0.7, 0.05, -0.4, 0.9, 0.2, -0.1, 0.3, 0.0, 0.1, 0.0, 0.05, -0.02]
        exact = sum(c / (k + 1) for k, c in enumerate(coeffs))

        def f(x):
            return sum(c * x**k for k, c in enumerate(coeffs))

        for core in CORES:
            got = core.quad(f, 0.0, 1.0, 1e-10, 1e-10, 2**14)
            assert got == pytest.approx(exact, rel=1e-13)

    def test_oscillatory_integral_matches_between_cores(self):
        f = lambda x: math.exp(-x) * math.sin(7.0 * x)
        a = _purecore.quad(f, 0.0, 3.0, 1e-12, 1e-12, 2**14)
        b = _fastcore.quad(f, 0.0, 3.0, 1e-12, 1e-12, 2**14)
        assert b == pytest.approx(a, rel=1e-13)
        exact = 7.0 / 50.0 - math.exp(-3.0) * (math.sin(21.0) + 7.0 * math.cos(21.0)) / 50.0
        assert a == pytest.approx(exact, rel=1e-10)

    def test_budget_exhaustion_matches(self):
        f = lambda x: 1.0 / x
        for core in CORES:
            with pytest.raises(tape.CoreConvergenceError):
                core.quad(f, 0.0, 1.0, 1e-10, 1e-10, 2**14)


class TestModelFunctions:
    def test_frame_lockstep(self, pend_pair, flat3_pair):
        for spec, (cmp_, cmc) in (pend_pair, flat3_pair):
            for q in sample_box(spec.n, 0.15, 20, seed=71):
                hu_p, hl_p, pr_p = _purecore.frame(cmp_, q)
                hu_c, hl_c, pr_c = _fastcore.frame(cmc, q)
                for a, b in ((hu_p, hu_c), (hl_p, hl_c), (pr_p, pr_c)):
                    assert np.max(np.abs(np.asarray(a) - np.asarray(b))) <= TOL

    def test_frame_derivatives_lockstep(self, pend_pair, flat3_pair):
        for spec, (cmp_, cmc) in (pend_pair, flat3_pair):
            for q in sample_box(spec.n, 0.15, 10, seed=73):
                outs_p = _purecore.frame_derivs(cmp_, q)
                outs_c = _fastcore.frame_derivs(cmc, q)
                assert len(outs_p) == len(outs_c) == 5
                for a, b in zip(outs_p, outs_c):
                    assert np.max(np.abs(np.asarray(a) - np.asarray(b))) <= TOL

    def test_transport_and_kinetic_lockstep(self, pend_pair):
        spec, (cmp_, cmc) = pend_pair
        for q in sample_box(2, 0.15, 12, seed=79):
            gp = _purecore.g_scalar(cmp_, q)
            gc = _fastcore.g_scalar(cmc, q)
            assert gc == pytest.approx(gp, rel=TOL, abs=TOL)
            ep = _purecore.kin_exponent(cmp_, q)
            ec = _fastcore.kin_exponent(cmc, q)
            assert ec == pytest.approx(ep, rel=TOL, abs=TOL)
            kp = _purecore.kin_value(cmp_, q)
            kc = _fastcore.kin_value(cmc, q)
            assert kc == pytest.approx(kp, rel=TOL)

    def test_slope_and_shaped_lockstep(self, pend_pair):
        spec, (cmp_, cmc) = pend_pair
        for q in sample_box(2, 0.12, 6, seed=83):
            up = _purecore.slope_value(cmp_, q)
            uc = _fastcore.slope_value(cmc, q)
            assert uc == pytest.approx(up, rel=TOL, abs=TOL)
            hp = _purecore.shaped_value(cmp_, q, 2.0)
            hc = _fastcore.shaped_value(cmc, q, 2.0)
            assert hc == pytest.approx(hp, rel=TOL, abs=TOL)

    def test_singular_segment_error_parity(self, pendulum):
        # small budget keeps the doomed refinement cheap on the pure side
        models = build_core_models(pendulum, max_subdiv=64)
        for core, cm in zip(CORES, models):
            with pytest.raises((tape.CoreConvergenceError, tape.CoreSingularError)):
                core.kin_value(cm, (0.25, 0.0))

    def test_pure_backend_drives_the_full_pipeline(self, monkeypatch):
        # high-level twin check: swap the core behind every consumer module
        import enershape.frame as frame_mod
        import enershape.kinetic as kinetic_mod
        import enershape.numerics as numerics_mod
        import enershape.potential as potential_mod

        spec = prepare(model.parse_model_text(cli.builtin_model_text("double-pendulum")))
        fast = solve_kinetic(spec).scalar((0.1, -0.05))
        for mod in (frame_mod, kinetic_mod, numerics_mod, potential_mod):
            monkeypatch.setattr(mod, "core", _purecore)
        slow = solve_kinetic(spec).scalar((0.1, -0.05))
        assert slow == pytest.approx(fast, rel=TOL)
