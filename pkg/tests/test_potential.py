"""Slope fields, integrability gate, shaped potential, certificate."""

import math

import numpy as np
import pytest

from enershape import numerics
from enershape.frame import engine_for
from enershape.kinetic import SingularSegmentError, solve_kinetic
from enershape.potential import (
    IntegrabilityError,
    ShapedPotential,
    build_shaped_potential,
    integrability_residual,
    positivity_certificate,
    prescribed_gradient,
)

from conftest import sample_box


class TestPrescribedGradient:
    def test_pendulum_matches_closed_form(self, pendulum, pendulum_k, pend_oracle):
        for q in sample_box(2, 0.15, 50, seed=37):
            u = prescribed_gradient(pendulum, pendulum_k, q)
            assert u.shape == (1,)
            assert u[0] == pytest.approx(pend_oracle.slope(*q), rel=1e-8)

    def test_vanishes_at_origin(self, pendulum, pendulum_k):
        u = prescribed_gradient(pendulum, pendulum_k, (0.0, 0.0))
        assert abs(u[0]) < 1e-15

    def test_tiny_along_the_actuated_axis(self, pendulum, pendulum_k):
        # u(0, y) collapses because sin(x) does; only roundoff survives
        for y in (-0.2, -0.05, 0.1, 0.2):
            u = prescribed_gradient(pendulum, pendulum_k, (0.0, y))
            assert abs(u[0]) < 1e-12

    def test_fast_and_general_paths_agree(self, pendulum, pendulum_k):
        eng = engine_for(pendulum)
        for q in sample_box(2, 0.12, 12, seed=41):
            fast = prescribed_gradient(pendulum, pendulum_k, q)
            fp = eng.frame_at(q)
            dh = eng.potential_gradient_at(q)
            general = (dh @ fp.proj) @ pendulum_k(q)
            assert fast[0] == pytest.approx(general[0], rel=1e-10)

    def test_linear_fields_on_flat_models(self, flat3, flat3_k, coupled3, coupled3_k):
        for q in sample_box(3, 0.3, 8, seed=43):
            u = prescribed_gradient(flat3, flat3_k, q)
            assert np.allclose(u, [0.8 * q[0], 0.6 * q[1]], atol=1e-12)
            u = prescribed_gradient(coupled3, coupled3_k, q)
            assert np.allclose(
                u, [0.8 * q[0] + 0.3 * q[2], 0.6 * q[1]], atol=1e-12
            )

    def test_doctored_entries_swap_and_flip(self, curl3, curl3_k):
        q = (0.2, -0.1, 0.05)
        u = prescribed_gradient(curl3, curl3_k, q)
        assert np.allclose(u, [0.1, 0.2], atol=1e-14)

    def test_singular_segment_propagates(self, pendulum, pendulum_k):
        with pytest.raises(SingularSegmentError):
            prescribed_gradient(pendulum, pendulum_k, (0.25, 0.0))


class TestIntegrability:
    def test_single_unactuated_direction_is_vacuous(self, pendulum, pendulum_k):
        assert integrability_residual(pendulum, pendulum_k) == 0.0

    def test_consistent_fields_close(self, flat3, flat3_k, coupled3, coupled3_k):
        assert integrability_residual(flat3, flat3_k) < 1e-8
        assert integrability_residual(coupled3, coupled3_k) < 1e-8

    def test_doctored_fields_fail_by_two(self, curl3, curl3_k):
        r = integrability_residual(curl3, curl3_k)
        assert r == pytest.approx(2.0, abs=1e-3)

    def test_gate_raises_with_residual_attached(self, curl3, curl3_k):
        with pytest.raises(IntegrabilityError) as info:
            build_shaped_potential(curl3, curl3_k)
        assert info.value.residual == pytest.approx(2.0, abs=1e-3)
        assert info.value.tol == 1e-6
        assert "integrability residual" in str(info.value)

    def test_gate_tolerance_is_adjustable(self, curl3, curl3_k):
        hhat = build_shaped_potential(curl3, curl3_k, varpi=2.0, integrability_tol=3.0)
        assert isinstance(hhat, ShapedPotential)


class TestShapedPotential:
    def test_flat_model_closed_form(self, flat3, flat3_k):
        hhat = build_shaped_potential(flat3, flat3_k)
        assert hhat.varpi == 2.0
        for q in sample_box(3, 0.3, 10, seed=47):
            expect = 0.4 * q[0] ** 2 + 0.3 * q[1] ** 2 + q[2] ** 2
            assert hhat(q) == pytest.approx(expect, rel=1e-10, abs=1e-12)

    def test_coupling_survives_the_path_integral(self, coupled3, coupled3_k):
        hhat = build_shaped_potential(coupled3, coupled3_k)
        assert hhat.varpi == 2.0
        for q in sample_box(3, 0.3, 10, seed=53):
            expect = (
                0.4 * q[0] ** 2
                + 0.3 * q[0] * q[2]
                + 0.3 * q[1] ** 2
                + q[2] ** 2
            )
            assert hhat(q) == pytest.approx(expect, rel=1e-10, abs=1e-12)

    def test_actuated_slice_is_a_pure_well(self, pendulum, pendulum_k):
        hhat = build_shaped_potential(pendulum, pendulum_k)
        for y in np.linspace(-0.2, 0.2, 9):
            assert hhat((0.0, float(y))) == pytest.approx(
                0.5 * hhat.varpi * y * y, abs=1e-14
            )

    def test_gradient_recovers_slope(self, pendulum, pendulum_k):
        hhat = build_shaped_potential(pendulum, pendulum_k)
        for q in sample_box(2, 0.1, 10, seed=59):
            grad = numerics.fd_grad(hhat, q, h=1e-5)
            u = prescribed_gradient(pendulum, pendulum_k, q)
            assert grad[0] == pytest.approx(u[0], abs=1e-6)

    def test_explicit_varpi_is_respected(self, pendulum, pendulum_k):
        hhat = build_shaped_potential(pendulum, pendulum_k, varpi=7.5)
        assert hhat.varpi == 7.5
        assert hhat((0.0, 0.1)) == pytest.approx(0.5 * 7.5 * 0.01, rel=1e-12)


class TestCertificate:
    def test_pendulum_passes(self, pendulum, pendulum_k):
        cert = positivity_certificate(pendulum, pendulum_k)
        assert cert.verdict is True
        assert cert.reason == "ok"
        assert cert.m_block.shape == (1, 1)
        assert cert.m_block[0, 0] == pytest.approx(1.0, abs=1e-6)
        assert cert.lambda_min == pytest.approx(1.0, abs=1e-6)
        assert abs(cert.a_norm_sq) < 1e-16
        assert cert.varpi_min <= 1e-8
        assert cert.varpi == 2.0

    def test_low_slope_pendulum_fails(self, pendulum_lo, pendulum_lo_k):
        cert = positivity_certificate(pendulum_lo, pendulum_lo_k)
        assert cert.verdict is False
        assert cert.reason == "M not positive-definite"
        assert cert.lambda_min == pytest.approx(-1.0, abs=1e-6)
        assert math.isinf(cert.varpi_min)
        assert cert.varpi == 2.0

    def test_potential_maximum_fails(self, flat2_max, flat2_max_k):
        cert = positivity_certificate(flat2_max, flat2_max_k)
        assert cert.verdict is False
        assert cert.m_block[0, 0] == pytest.approx(-1.0, abs=1e-8)

    def test_flat_three_dof_blocks(self, flat3, flat3_k):
        cert = positivity_certificate(flat3, flat3_k)
        assert np.allclose(cert.m_block, np.diag([0.8, 0.6]), atol=1e-9)
        assert np.allclose(cert.a_block, np.zeros((2, 1)), atol=1e-12)
        assert cert.lambda_min == pytest.approx(0.6, abs=1e-9)
        assert cert.varpi_min == pytest.approx(0.0, abs=1e-12)
        assert cert.verdict is True

    def test_coupled_certified_bound(self, coupled3, coupled3_k):
        cert = positivity_certificate(coupled3, coupled3_k)
        assert np.allclose(cert.m_block, np.diag([0.8, 0.6]), atol=1e-9)
        assert np.allclose(cert.a_block, [[0.3], [0.0]], atol=1e-9)
        assert cert.a_norm_sq == pytest.approx(0.09, abs=1e-9)
        assert cert.varpi_min == pytest.approx(0.15, abs=1e-8)
        assert cert.varpi == 2.0
        assert cert.verdict is True

    def test_varpi_below_the_bound_fails(self, coupled3, coupled3_k):
        cert = positivity_certificate(coupled3, coupled3_k, varpi=0.1)
        assert cert.verdict is False
        assert cert.reason == "varpi below the certified bound"
        assert cert.varpi == 0.1

    def test_varpi_above_the_bound_passes(self, coupled3, coupled3_k):
        cert = positivity_certificate(coupled3, coupled3_k, varpi=0.2)
        assert cert.verdict is True
        assert cert.varpi == 0.2

    def test_hessian_assembly(self, coupled3, coupled3_k):
        cert = positivity_certificate(coupled3, coupled3_k)
        expect = np.zeros((3, 3))
        expect[:2, :2] = cert.m_block
        expect[:2, 2:] = cert.a_block
        expect[2:, :2] = cert.a_block.T
        expect[2, 2] = cert.varpi
        assert np.array_equal(cert.hess0, expect)
        assert numerics.min_eigen_sym(cert.hess0) > 0.0

    def test_profile_scaling_scales_blocks(self, pendulum, pendulum_k):
        base = positivity_certificate(pendulum, pendulum_k)
        doubled_k = solve_kinetic(pendulum, xi="2")
        doubled = positivity_certificate(pendulum, doubled_k)
        assert doubled.m_block[0, 0] == pytest.approx(
            2.0 * base.m_block[0, 0], rel=1e-6
        )
        assert doubled.verdict == base.verdict

    def test_shaped_hessian_matches_certificate(self, pendulum, pendulum_k, coupled3, coupled3_k):
        for spec, ksol in ((pendulum, pendulum_k), (coupled3, coupled3_k)):
            cert = positivity_certificate(spec, ksol)
            hhat = build_shaped_potential(spec, ksol)
            hess = numerics.fd_hess(hhat, (0.0,) * spec.n)
            assert np.allclose(hess, cert.hess0, atol=1e-4)
            assert numerics.min_eigen_sym(hess) > 0.0
