"""Tests for grids, wave fields, the comoving propagator and ground states."""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from dwoltransport.dynamics import (
    Frame,
    GridSpec,
    PropagationConfig,
    WaveField,
    boundary_ratio,
    comoving_transform,
    double_well_trial,
    energy_expectation,
    fidelity,
    fsom_step,
    gaussian_state,
    harmonic_ground_state,
    ite_ground_state,
    lab_transform,
    overlap,
    potential_on_grid,
    propagate,
)
from dwoltransport.errors import (
    BoundaryContaminationError,
    FrameMismatchError,
    GridMismatchError,
    NoConvergenceError,
    StepUnderflowError,
)
from dwoltransport.lattice import LatticeParams, evaluate_potential
from dwoltransport.sta import Trajectory, TransportDirection, TransportSpec, design_sta
from dwoltransport.verification import count_density_maxima


@pytest.fixture
def harmonic_potential(line_grid, plane_lattice, plane_harmonic):
    """V_D sampled on the 1D test grid."""
    return potential_on_grid(line_grid, plane_lattice, model="harmonic", h=plane_harmonic)


@pytest.fixture
def ground(line_grid, harmonic_potential):
    """ITE ground state of the harmonic potential."""
    state, energy = ite_ground_state(harmonic_potential, line_grid, tol_energy=1e-10)
    return state, energy


class TestGridSpec:
    """Test grid geometry."""

    def test_centered(self):
        """Test a centred grid starts half an extent below the centre."""
        grid = GridSpec.centered([64, 32], [8.0, 4.0], [1.0, 0.0])
        assert grid.origin == (-3.0, -2.0)
        assert grid.spacings == (0.125, 0.125)
        assert grid.cell_volume == pytest.approx(0.015625)
        assert grid.axes()[0][32] == pytest.approx(1.0)

    def test_rejects_slow_lengths(self):
        """Test point counts with large prime factors are rejected."""
        with pytest.raises(ValueError, match="small primes"):
            GridSpec.centered([17], [1.0])

    def test_rejects_bad_extents(self):
        """Test extents must be positive and match the shape."""
        with pytest.raises(ValueError):
            GridSpec((8,), (0.0,), (0.0,))
        with pytest.raises(ValueError):
            GridSpec((8, 8), (1.0,), (0.0,))

    def test_coordinates_fill_missing_axes(self):
        """Test absent axes are held at zero."""
        x, y, z = GridSpec.centered([8], [1.0]).coordinates()
        assert np.shape(x) == (8,)
        assert y == 0.0
        assert z == 0.0


class TestWaveField:
    """Test wave-field containers."""

    def test_shape_must_match_grid(self, line_grid):
        """Test amplitudes must have the grid's shape."""
        with pytest.raises(GridMismatchError):
            WaveField(np.zeros(64, dtype=complex), line_grid)

    def test_gaussian_normalised(self, line_grid, plane_harmonic):
        """Test Gaussian states have unit norm."""
        phi = gaussian_state(line_grid, [plane_harmonic.equilibrium_x], [plane_harmonic.l_x])
        assert phi.norm() == pytest.approx(1.0)

    def test_frame_required(self, line_grid):
        """Test frame checks raise on the wrong frame."""
        phi = WaveField(np.ones(128, dtype=complex), line_grid, frame=Frame.LAB)
        with pytest.raises(FrameMismatchError):
            phi.require(Frame.COMOVING)

    def test_boundary_ratio(self):
        """Test the boundary ratio compares face amplitudes with the peak."""
        values = np.array([0.1, 0.5, 1.0, 0.5, 0.2], dtype=complex)
        assert boundary_ratio(values) == pytest.approx(0.2)
        assert boundary_ratio(np.zeros(4, dtype=complex)) == 0.0


class TestOverlaps:
    """Test overlaps and fidelities."""

    def test_self_fidelity(self, line_grid, plane_harmonic):
        """Test a normalised state has unit fidelity with itself."""
        phi = harmonic_ground_state(line_grid, plane_harmonic)
        assert fidelity(phi, phi) == pytest.approx(1.0)

    def test_grid_mismatch(self, line_grid, plane_harmonic):
        """Test fields on different grids cannot be compared."""
        phi = harmonic_ground_state(line_grid, plane_harmonic)
        other = GridSpec.centered([64], [line_grid.extents[0]], [plane_harmonic.equilibrium_x])
        with pytest.raises(GridMismatchError):
            overlap(phi, harmonic_ground_state(other, plane_harmonic))

    def test_frame_mismatch(self, line_grid, plane_harmonic):
        """Test fields in different frames cannot be compared."""
        phi = harmonic_ground_state(line_grid, plane_harmonic)
        with pytest.raises(FrameMismatchError):
            overlap(phi, replace(phi, frame=Frame.LAB))


class TestFrames:
    """Test the lab and comoving frame transforms."""

    def test_round_trip(self, line_grid, plane_harmonic):
        """Test lab → comoving → lab returns the original field."""
        traj = design_sta(
            TransportSpec(TransportDirection.X, 4 * plane_harmonic.l_x, plane_harmonic.t_x),
            plane_harmonic,
        )
        psi = replace(harmonic_ground_state(line_grid, plane_harmonic), frame=Frame.LAB)
        t = 0.3 * traj.t_f
        back = lab_transform(comoving_transform(psi, traj, t), traj, t)
        np.testing.assert_allclose(back.amplitudes, psi.amplitudes, atol=1e-10)
        assert back.frame is Frame.LAB

    def test_moving_packet_is_centred(self, line_grid, plane_harmonic):
        """Test a displaced, boosted packet maps to the resting one."""
        h = plane_harmonic
        traj = design_sta(TransportSpec(TransportDirection.X, 4 * h.l_x, h.t_x), h)
        t = 0.5 * traj.t_f
        q = float(traj.position(t, "x"))
        v = float(traj.velocity(t, "x"))
        x = line_grid.axes()[0]
        rest = harmonic_ground_state(line_grid, h)
        moved = gaussian_state(line_grid, [h.equilibrium_x + q], [h.l_x], frame=Frame.LAB)
        moving = replace(moved, amplitudes=moved.amplitudes * np.exp(1j * v * x))
        assert fidelity(comoving_transform(moving, traj, t), rest) == pytest.approx(1.0, abs=1e-10)

    def test_shift_acts_before_boost(self, line_grid, plane_harmonic):
        """Test the packet keeps the phase exp(i m q̇_0 q_0) of shifting first."""
        h = plane_harmonic
        traj = design_sta(TransportSpec(TransportDirection.X, 4 * h.l_x, h.t_x), h)
        t = 0.4 * traj.t_f
        q = float(traj.position(t, "x"))
        v = float(traj.velocity(t, "x"))
        assert abs(q * v) > 1e-3
        x = line_grid.axes()[0]
        rest = harmonic_ground_state(line_grid, h)
        moved = gaussian_state(line_grid, [h.equilibrium_x + q], [h.l_x], frame=Frame.LAB)
        moving = replace(moved, amplitudes=moved.amplitudes * np.exp(1j * v * x))
        phi = comoving_transform(moving, traj, t)
        np.testing.assert_allclose(
            phi.amplitudes, rest.amplitudes * np.exp(1j * v * q), atol=1e-9
        )


class TestPropagation:
    """Test the comoving split-operator propagation."""

    def test_stationary_ground_state(self, ground, harmonic_potential):
        """Test a resting lattice leaves the ground state unchanged."""
        state, _ = ground
        traj = Trajectory.stationary(1.0)
        result = propagate(state, traj, harmonic_potential)
        assert fidelity(state, result.final) == pytest.approx(1.0, abs=1e-9)
        assert result.norm_drift < 1e-10
        assert result.final.time == 1.0

    def test_harmonic_sta_transport(self, ground, harmonic_potential, plane_harmonic):
        """Test an STA transport in the harmonic potential ends in the ground state."""
        state, _ = ground
        h = plane_harmonic
        traj = design_sta(TransportSpec(TransportDirection.X, 20 * h.l_x, 2 * h.t_x), h)
        cfg = PropagationConfig(max_rel_error=1e-7, max_steps=5000)
        result = propagate(state, traj, harmonic_potential, cfg)
        assert fidelity(state, result.final) > 1 - 1e-6
        assert result.norm_drift < 1e-10
        assert result.accepted_steps >= cfg.min_steps

    def test_non_transported_state_is_excited(self, ground, harmonic_potential, plane_harmonic):
        """Test a fast non-STA ramp leaves the atom excited."""
        state, _ = ground
        h = plane_harmonic
        distance = 2 * h.l_x
        t_f = 0.25 * h.t_x
        ramp = Trajectory(
            t_f=t_f,
            x=np.polynomial.Polynomial([0.0, 0.0, 0.0, 10 * distance, -15 * distance, 6 * distance]),
            y=np.polynomial.Polynomial([0.0]),
        )
        result = propagate(state, ramp, harmonic_potential, PropagationConfig(max_steps=2000))
        assert fidelity(state, result.final) < 0.99

    def test_fixed_steps(self, ground, harmonic_potential):
        """Test non-adaptive runs take t_f/dt equal steps."""
        state, _ = ground
        cfg = PropagationConfig(adaptive=False, dt_initial=0.01, min_steps=1, max_steps=1000)
        result = propagate(state, Trajectory.stationary(0.1), harmonic_potential, cfg)
        assert result.accepted_steps == 10
        assert result.rejected_steps == 0

    def test_composes_over_split_interval(self, ground, harmonic_potential, plane_harmonic):
        """Test running 0 → t_f/2 → t_f equals one run 0 → t_f on the same steps."""
        state, _ = ground
        h = plane_harmonic
        traj = design_sta(TransportSpec(TransportDirection.X, 10 * h.l_x, 2 * h.t_x), h)
        cfg = PropagationConfig(
            adaptive=False, dt_initial=traj.t_f / 400, min_steps=1, max_steps=400
        )
        start = replace(state, time=0.0)
        direct = propagate(start, traj, harmonic_potential, cfg)
        first = propagate(start, traj, harmonic_potential, cfg, t_end=traj.t_f / 2)
        assert first.final.time == pytest.approx(traj.t_f / 2)
        second = propagate(first.final, traj, harmonic_potential, cfg)
        assert first.accepted_steps + second.accepted_steps == direct.accepted_steps == 400
        np.testing.assert_allclose(
            second.final.amplitudes, direct.final.amplitudes, atol=1e-10
        )

    def test_adaptive_runs_compose(self, ground, harmonic_potential, plane_harmonic):
        """Test a restart at t_f/2 agrees with the uninterrupted adaptive run."""
        state, _ = ground
        h = plane_harmonic
        traj = design_sta(TransportSpec(TransportDirection.X, 10 * h.l_x, 2 * h.t_x), h)
        cfg = PropagationConfig(max_rel_error=1e-7, max_steps=5000)
        start = replace(state, time=0.0)
        direct = propagate(start, traj, harmonic_potential, cfg)
        first = propagate(start, traj, harmonic_potential, cfg, t_end=traj.t_f / 2)
        second = propagate(first.final, traj, harmonic_potential, cfg)
        assert fidelity(second.final, direct.final) == pytest.approx(1.0, abs=1e-6)

    def test_snapshots(self, ground, harmonic_potential, plane_harmonic):
        """Test snapshots are taken exactly at the requested times."""
        state, _ = ground
        h = plane_harmonic
        traj = design_sta(TransportSpec(TransportDirection.X, 5 * h.l_x, 2 * h.t_x), h)
        times = [0.0, 0.5 * traj.t_f, traj.t_f]
        result = propagate(state, traj, harmonic_potential, snapshot_times=times)
        assert sorted(result.snapshots) == times
        assert result.snapshots[0.5 * traj.t_f].time == pytest.approx(0.5 * traj.t_f)
        assert result.snapshots[0.0] is state

    def test_on_step_callback(self, ground, harmonic_potential):
        """Test the step callback sees increasing times up to t_f."""
        state, _ = ground
        seen: list[float] = []
        propagate(state, Trajectory.stationary(0.2), harmonic_potential, on_step=seen.append)
        assert seen == sorted(seen)
        assert seen[-1] == pytest.approx(0.2)

    def test_requires_comoving_frame(self, ground, harmonic_potential):
        """Test lab-frame input is rejected."""
        state, _ = ground
        with pytest.raises(FrameMismatchError):
            propagate(replace(state, frame=Frame.LAB), Trajectory.stationary(1.0), harmonic_potential)

    def test_potential_grid_mismatch(self, ground):
        """Test a potential on another grid is rejected."""
        state, _ = ground
        with pytest.raises(GridMismatchError):
            propagate(state, Trajectory.stationary(1.0), np.zeros(64))

    def test_boundary_abort(self, line_grid, harmonic_potential, plane_harmonic):
        """Test amplitude on the window faces aborts the run."""
        wide = gaussian_state(line_grid, [plane_harmonic.equilibrium_x], [8 * plane_harmonic.l_x])
        with pytest.raises(BoundaryContaminationError):
            propagate(wide, Trajectory.stationary(0.1), harmonic_potential)

    def test_boundary_warn(self, line_grid, harmonic_potential, plane_harmonic):
        """Test the warn policy flags boundary amplitude and carries on."""
        wide = gaussian_state(line_grid, [plane_harmonic.equilibrium_x], [8 * plane_harmonic.l_x])
        cfg = PropagationConfig(boundary_policy="warn")
        result = propagate(wide, Trajectory.stationary(0.1), harmonic_potential, cfg)
        assert "boundary-amplitude" in result.diagnostics

    def test_step_underflow(self, ground, harmonic_potential, plane_harmonic):
        """Test an unreachable error target stops the run."""
        state, _ = ground
        h = plane_harmonic
        traj = design_sta(TransportSpec(TransportDirection.X, 20 * h.l_x, h.t_x), h)
        cfg = PropagationConfig(max_rel_error=1e-300, max_substeps=2)
        with pytest.raises(StepUnderflowError):
            propagate(state, traj, harmonic_potential, cfg)

    def test_single_step(self, ground, plane_lattice, plane_harmonic):
        """Test one FSOM step with the full lattice keeps the norm."""
        state, _ = ground
        h = plane_harmonic
        traj = design_sta(TransportSpec(TransportDirection.X, 5 * h.l_x, h.t_x), h)
        stepped = fsom_step(state, traj, 0.1 * traj.t_f, 1e-3 * traj.t_f, plane_lattice)
        assert stepped.norm() == pytest.approx(1.0, abs=1e-12)
        assert stepped.time == pytest.approx(0.1 * traj.t_f + 1e-3 * traj.t_f)


class TestGroundState:
    """Test imaginary-time evolution."""

    def test_harmonic_energy(self, ground, plane_harmonic):
        """Test the ITE energy equals ω_x/2 above the potential minimum."""
        _, energy = ground
        h = plane_harmonic
        expected = 0.5 * h.omega_x + float(h.potential(h.equilibrium_x))
        assert energy == pytest.approx(expected, abs=1e-6 * h.omega_x)

    def test_matches_analytic_state(self, ground, line_grid, plane_harmonic):
        """Test the ITE state overlaps the analytic Gaussian."""
        state, _ = ground
        analytic = harmonic_ground_state(line_grid, plane_harmonic)
        assert fidelity(state, analytic) == pytest.approx(1.0, abs=1e-8)

    def test_energy_expectation(self, line_grid, harmonic_potential, plane_harmonic):
        """Test ⟨H⟩ of the analytic ground state."""
        h = plane_harmonic
        phi = harmonic_ground_state(line_grid, h)
        expected = 0.5 * h.omega_x + float(h.potential(h.equilibrium_x))
        assert energy_expectation(phi, harmonic_potential) == pytest.approx(
            expected, abs=1e-8 * h.omega_x
        )

    def test_energy_never_rises(self, line_grid, harmonic_potential, plane_harmonic):
        """Test the ITE energy history is non-increasing from a displaced trial."""
        h = plane_harmonic
        trial = gaussian_state(line_grid, [h.equilibrium_x + 2 * h.l_x], [1.5 * h.l_x])
        history: list[float] = []
        _, energy = ite_ground_state(
            harmonic_potential, line_grid, trial=trial, tol_energy=1e-9, history=history
        )
        steps = np.diff(history)
        assert np.all(steps <= 1e-10 * abs(energy))
        assert history[-1] == energy

    def test_no_convergence(self, line_grid, harmonic_potential):
        """Test the iteration cap raises."""
        with pytest.raises(NoConvergenceError):
            ite_ground_state(harmonic_potential, line_grid, max_iter=1)

    def test_potential_grid_mismatch(self, line_grid):
        """Test the potential must be sampled on the grid."""
        with pytest.raises(GridMismatchError):
            ite_ground_state(np.zeros(64), line_grid)

    def test_potential_on_grid_reduced(self, plane_lattice, plane_harmonic):
        """Test reduced grids sample the lattice at y = z = 0."""
        grid = GridSpec.centered([16], [2 * math.pi], [plane_harmonic.expansion_x])
        values = potential_on_grid(grid, plane_lattice)
        x = grid.axes()[0]
        np.testing.assert_allclose(values, evaluate_potential((x, 0.0, 0.0), plane_lattice))

    def test_double_well_trial(self, plane_lattice, plane_harmonic):
        """Test the trial state puts equal weight on both wells of a cell."""
        grid = GridSpec.centered([512], [2 * math.pi], [0.0])
        trial = double_well_trial(grid, plane_lattice, plane_harmonic)
        assert trial.frame is Frame.COMOVING
        assert trial.norm() == pytest.approx(1.0)
        density = trial.density()
        assert count_density_maxima(density) == 2
        x = grid.axes()[0]
        assert density[x < 0].max() == pytest.approx(density[x > 0].max(), rel=1e-2)

    def test_double_well_trial_single_well(self, line_grid, plane_harmonic):
        """Test a cell with one minimum falls back to the harmonic state."""
        flat = LatticeParams(u_d0=750.0, beta=0.0, theta=math.pi / 2, phi=math.pi / 2)
        trial = double_well_trial(line_grid, flat, plane_harmonic)
        analytic = harmonic_ground_state(line_grid, plane_harmonic)
        assert fidelity(trial, analytic) == pytest.approx(1.0, abs=1e-12)
