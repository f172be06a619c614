"""Tests for the lattice potential and its harmonic model."""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from dwoltransport.errors import NonConfiningError
from dwoltransport.lattice import (
    LatticeParams,
    critical_acceleration,
    evaluate_potential,
    evaluate_potential_terms,
    expansion_point,
    harmonic_approximation,
    intermediate_barrier_acceleration,
    reference_lattice,
)


class TestLatticeParams:
    """Test lattice parameter validation."""

    def test_rayleigh_length_default(self):
        """Test unset Rayleigh lengths follow k_z w0² / 2."""
        p = LatticeParams(u_d0=1.0, beta=0.3, theta=0.0, phi=0.0, w0x=10.0, w0y=20.0)
        assert p.z_Rx == pytest.approx(50.0)
        assert p.z_Ry == pytest.approx(200.0)

    @pytest.mark.parametrize(
        "changes",
        [{"u_d0": -1.0}, {"beta": 2.0}, {"theta": 4.0}, {"xi_z": -0.1}, {"w0x": 0.0}],
    )
    def test_out_of_range(self, changes):
        """Test out-of-range parameters are rejected."""
        values = {"u_d0": 1.0, "beta": 0.3, "theta": 0.0, "phi": 0.0, **changes}
        with pytest.raises(ValueError):
            LatticeParams(**values)

    def test_recoil_units(self, plane_lattice):
        """Test E_R = 1/2 and a period of 2π with k_L = m = 1."""
        assert plane_lattice.e_r == 0.5
        assert plane_lattice.period == pytest.approx(2 * math.pi)


class TestPotential:
    """Test the full lattice potential."""

    def test_depth_at_expansion_point(self, plane_lattice, plane_harmonic):
        """Test U_D at the expansion point equals -v_d0."""
        value = evaluate_potential(expansion_point(plane_lattice), plane_lattice)
        assert float(value) == pytest.approx(-plane_harmonic.v_d0, rel=1e-12)

    def test_periodic(self, plane_lattice):
        """Test plane-wave lattices repeat after one period along x and y."""
        rng = np.random.default_rng(4)
        x, y = rng.uniform(-5, 5, (2, 50))
        base = evaluate_potential((x, y, 0.0), plane_lattice)
        period = plane_lattice.period
        np.testing.assert_allclose(
            evaluate_potential((x + period, y, 0.0), plane_lattice), base, atol=1e-9
        )
        np.testing.assert_allclose(
            evaluate_potential((x, y + period, 0.0), plane_lattice), base, atol=1e-9
        )

    def test_frozen_waists_match_at_focus(self, gaussian_lattice):
        """Test freezing the waists changes nothing in the z = 0 plane."""
        rng = np.random.default_rng(5)
        x, y = rng.uniform(-3, 3, (2, 20))
        np.testing.assert_allclose(
            evaluate_potential((x, y, 0.0), gaussian_lattice, frozen_waists=True),
            evaluate_potential((x, y, 0.0), gaussian_lattice),
            rtol=1e-12,
        )

    def test_scales_with_depth(self, plane_lattice):
        """Test U_D is linear in u_d0."""
        deeper = replace(plane_lattice, u_d0=2 * plane_lattice.u_d0)
        r = (np.linspace(-3, 3, 7), 0.4, 0.0)
        np.testing.assert_allclose(
            evaluate_potential(r, deeper), 2 * evaluate_potential(r, plane_lattice)
        )

    def test_origin_closed_form(self, gaussian_lattice):
        """Test the four terms at the origin."""
        p = gaussian_lattice
        terms = evaluate_potential_terms((0.0, 0.0, 0.0), p)
        c, s = math.cos(p.beta / 2), math.sin(p.beta / 2)
        assert float(terms.parallel) == pytest.approx(2 * c**2)
        assert float(terms.perpendicular) == pytest.approx(
            2 * s**2 * (1 + math.sin(p.theta)) ** 2
        )
        assert float(terms.z) == pytest.approx(p.xi_z)
        assert float(terms.cross) == pytest.approx(
            2 * math.sqrt(p.xi_z) * c * math.cos(p.phi / 2)
        )
        value = evaluate_potential((0.0, 0.0, 0.0), p)
        assert float(value) == pytest.approx(-p.u_d0 * sum(float(t) for t in terms))

    def test_planar_terms_vanish(self, plane_lattice):
        """Test ξ_z = 0 removes the z and cross terms everywhere."""
        rng = np.random.default_rng(6)
        x, y, z = rng.uniform(-3, 3, (3, 20))
        terms = evaluate_potential_terms((x, y, z), plane_lattice)
        assert not terms.z.any()
        assert not terms.cross.any()

    def test_z_node(self, gaussian_lattice):
        """Test the z term vanishes on a node of the z standing wave."""
        rng = np.random.default_rng(7)
        x, y = rng.uniform(-3, 3, (2, 20))
        z = math.pi / (2 * gaussian_lattice.k_z)
        terms = evaluate_potential_terms((x, y, z), gaussian_lattice)
        np.testing.assert_allclose(terms.z, 0.0, atol=1e-30)

    def test_separable_without_perpendicular_beams(self):
        """Test β = 0 and ξ_z = 0 leave cos(2y) - cos(2x) + 2."""
        p = LatticeParams(u_d0=3.0, beta=0.0, theta=0.3, phi=0.0)
        x, y = np.meshgrid(np.linspace(-4, 4, 17), np.linspace(-4, 4, 13))
        np.testing.assert_allclose(
            evaluate_potential((x, y, 0.0), p),
            -3.0 * (np.cos(2 * y) - np.cos(2 * x) + 2),
            atol=1e-12,
        )


class TestHarmonicApproximation:
    """Test the harmonic model about the expansion point."""

    def test_plane_wave_closed_form(self, plane_lattice, plane_harmonic):
        """Test frequencies, tilt and depth against their closed forms."""
        u = plane_lattice.u_d0
        c2 = math.cos(plane_lattice.beta / 2) ** 2
        s2 = math.sin(plane_lattice.beta / 2) ** 2
        h = plane_harmonic
        assert h.omega_x**2 == pytest.approx(4 * u * math.cos(plane_lattice.beta), rel=1e-9)
        assert h.omega_y**2 == pytest.approx(4 * u, rel=1e-9)
        assert h.a_x == pytest.approx(-4 * u * s2, rel=1e-9)
        assert h.v_d0 == pytest.approx(u * (4 * c2 + 2 * s2), rel=1e-9)

    def test_printed_form_agrees_on_axis(self, plane_lattice, plane_harmonic):
        """Test the leading-order form equals the exact one for plane waves at θ = π/2."""
        printed = harmonic_approximation(plane_lattice, form="printed", planar=True)
        assert printed.omega_x == pytest.approx(plane_harmonic.omega_x, rel=1e-9)
        assert printed.omega_y == pytest.approx(plane_harmonic.omega_y, rel=1e-9)
        assert printed.a_x == pytest.approx(plane_harmonic.a_x, rel=1e-9)
        assert printed.v_d0 == pytest.approx(plane_harmonic.v_d0, rel=1e-9)

    def test_curvature_matches_finite_differences(self, gaussian_lattice, gaussian_harmonic):
        """Test the exact form reproduces the Hessian of U_D with finite waists."""
        x0, _, _ = expansion_point(gaussian_lattice)
        step = 1e-3
        points = np.array([-step, 0.0, step])
        along_x = evaluate_potential((x0 + points, 0.0, 0.0), gaussian_lattice)
        along_y = evaluate_potential((x0, points, 0.0), gaussian_lattice)
        along_z = evaluate_potential((x0, 0.0, points), gaussian_lattice)
        h = gaussian_harmonic
        for values, omega in ((along_x, h.omega_x), (along_y, h.omega_y), (along_z, h.omega_z)):
            curvature = (values[0] - 2 * values[1] + values[2]) / step**2
            assert curvature == pytest.approx(omega**2, rel=1e-5)
        slope = (along_x[2] - along_x[0]) / (2 * step)
        assert slope == pytest.approx(h.a_x, rel=1e-6)

    def test_zero_point_lengths(self, plane_harmonic):
        """Test l = sqrt(1/(2 m ω)) and T = 2π/ω."""
        h = plane_harmonic
        assert h.l_x == pytest.approx(math.sqrt(1 / (2 * h.omega_x)))
        assert h.t_x == pytest.approx(2 * math.pi / h.omega_x)

    def test_planar_model_flags_unconfined_z(self, plane_harmonic):
        """Test a planar model without a z wave reports the free axis."""
        assert plane_harmonic.omega_z == 0.0
        assert math.isinf(plane_harmonic.l_z)
        assert "z-unconfined" in plane_harmonic.warnings

    def test_unconfined_z_raises(self, plane_lattice):
        """Test a full model needs z confinement."""
        with pytest.raises(NonConfiningError, match="omega_z"):
            harmonic_approximation(plane_lattice)

    def test_non_confining_x(self):
        """Test an unfavourable beam angle turns the x curvature negative."""
        p = LatticeParams(
            u_d0=100.0, beta=math.pi / 2, theta=math.acos(-0.25), phi=math.pi / 2
        )
        with pytest.raises(NonConfiningError, match="omega_x"):
            harmonic_approximation(p, planar=True)

    def test_harmonic_potential_minimum(self, plane_harmonic):
        """Test V_D is smallest at the equilibrium point with the offset eigenvalue."""
        h = plane_harmonic
        x = h.equilibrium_x + np.linspace(-0.01, 0.01, 201)
        values = h.potential(x)
        assert int(np.argmin(values)) == 100
        ground = h.energy((0, 0, 0), include_depth=True)
        assert ground == pytest.approx(
            0.5 * (h.omega_x + h.omega_y) + float(values[100]), rel=1e-9
        )

    def test_warnings_logged(self, caplog):
        """Test validity warnings go to the diagnostics logger."""
        p = reference_lattice(1500, xi_z=0.05, waist_lx=50.0)
        with caplog.at_level("WARNING", logger="dwoltransport.diagnostics"):
            h = harmonic_approximation(p)
        assert "non-paraxial" in h.warnings
        assert any("non-paraxial" in r.message for r in caplog.records)


class TestReferenceLattice:
    """Test the recoil-unit lattice factory."""

    def test_waists_in_harmonic_lengths(self):
        """Test waists are given in units of the plane-wave l_x."""
        p = reference_lattice(1500, waist_lx=100.0)
        plane = harmonic_approximation(replace(p, w0x=math.inf, w0y=math.inf), planar=True)
        assert p.w0x == pytest.approx(100.0 * plane.l_x)
        assert p.u_d0 == 750.0


class TestCriticalAcceleration:
    """Test the acceleration limits of one lattice site."""

    def test_positive_and_ordered(self, plane_lattice):
        """Test the barrier limit never exceeds the site limit."""
        a_crit = critical_acceleration(plane_lattice, "x")
        a_int = intermediate_barrier_acceleration(plane_lattice)
        assert a_crit > 0
        assert 0 <= a_int <= a_crit

    def test_linear_in_depth(self, plane_lattice):
        """Test doubling the depth doubles the critical acceleration."""
        deeper = replace(plane_lattice, u_d0=2 * plane_lattice.u_d0)
        assert critical_acceleration(deeper, "y") == pytest.approx(
            2 * critical_acceleration(plane_lattice, "y"), rel=1e-6
        )

    def test_tilt_beyond_limit_removes_minimum(self, plane_lattice):
        """Test a tilt just above the limit leaves no minimum within the scan."""
        a_crit = critical_acceleration(plane_lattice, "y")
        s = np.linspace(-plane_lattice.period, plane_lattice.period, 8193)
        x0, _, _ = expansion_point(plane_lattice)
        values = evaluate_potential((x0, s, 0.0), plane_lattice)
        tilted = values + 1.01 * a_crit * s
        inner = tilted[1:-1]
        assert not np.any((inner < tilted[:-2]) & (inner < tilted[2:]))

    def test_flat_lattice(self):
        """Test an empty lattice has no critical acceleration."""
        p = LatticeParams(u_d0=0.0, beta=0.3, theta=math.pi / 2, phi=math.pi / 2)
        assert critical_acceleration(p, "x") == 0.0
