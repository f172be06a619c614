"""Wavefunction dynamics on a periodic grid: FSOM propagation and ITE.

Propagation happens in the frame comoving with the lattice, reached by
Φ = exp(i p·q_0) exp(-i m r·q̇_0) Ψ. There the lattice is static and the
inertial term m r·q̈_0 enters as a position kick and a momentum kick per step.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import fft

from .errors import (
    BoundaryContaminationError,
    FrameMismatchError,
    GridMismatchError,
    NoConvergenceError,
    NonFiniteAmplitudeError,
    StepUnderflowError,
)
from .lattice import HarmonicModel, LatticeParams, evaluate_potential
from .sta import AXES, Trajectory
from .units import HBAR

logger = logging.getLogger(__name__)
diagnostics = logging.getLogger("dwoltransport.diagnostics")

PotentialModel = Literal["full", "harmonic"]
BoundaryPolicy = Literal["abort", "warn"]
ComplexArray = NDArray[np.complex128]

MIN_STEP_FRACTION = 2.0**-20
DTAU_LADDER = 16
PHASE_CACHE_SIZE = 8


class Frame(str, Enum):
    LAB = "lab"
    COMOVING = "comoving"

    @property
    def code(self) -> int:
        return 0 if self is Frame.LAB else 1


@dataclass(frozen=True)
class GridSpec:
    """Periodic grid; ``origin`` is the coordinate of the first point per axis."""

    shape: tuple[int, ...]
    extents: tuple[float, ...]
    origin: tuple[float, ...]

    def __post_init__(self) -> None:
        if not 1 <= len(self.shape) <= 3:
            raise ValueError("grids have one to three axes")
        if not len(self.shape) == len(self.extents) == len(self.origin):
            raise ValueError("shape, extents and origin must have equal length")
        for n in self.shape:
            if n < 2 or fft.next_fast_len(n) != n:
                raise ValueError(
                    f"point count {n} is not a product of small primes "
                    f"(next fast length is {fft.next_fast_len(max(n, 2))})"
                )
        if not all(e > 0 and math.isfinite(e) for e in self.extents):
            raise ValueError("extents must be positive and finite")

    @classmethod
    def centered(
        cls,
        shape: Sequence[int],
        extents: Sequence[float],
        center: Sequence[float] | None = None,
    ) -> GridSpec:
        center = center if center is not None else [0.0] * len(shape)
        origin = tuple(c - e / 2 for c, e in zip(center, extents, strict=True))
        counts = tuple(int(n) for n in shape)
        return cls(counts, tuple(float(e) for e in extents), origin)

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple(e / n for e, n in zip(self.extents, self.shape, strict=True))

    @property
    def cell_volume(self) -> float:
        return math.prod(self.spacings)

    def axes(self) -> list[NDArray[np.float64]]:
        return [
            o + d * np.arange(n)
            for o, d, n in zip(self.origin, self.spacings, self.shape, strict=True)
        ]

    def mesh(self) -> tuple[NDArray[np.float64], ...]:
        """Sparse coordinate arrays broadcasting to ``shape``."""
        return tuple(np.meshgrid(*self.axes(), indexing="ij", sparse=True))

    def coordinates(self) -> tuple[ArrayLike, ArrayLike, ArrayLike]:
        """(x, y, z) with absent axes held at 0."""
        mesh = self.mesh()
        return (
            mesh[0],
            mesh[1] if self.ndim > 1 else 0.0,
            mesh[2] if self.ndim > 2 else 0.0,
        )

    def wavenumbers(self) -> tuple[NDArray[np.float64], ...]:
        freqs = [
            2 * np.pi * fft.fftfreq(n, d)
            for n, d in zip(self.shape, self.spacings, strict=True)
        ]
        return tuple(np.meshgrid(*freqs, indexing="ij", sparse=True))


@dataclass(frozen=True, eq=False)
class WaveField:
    amplitudes: ComplexArray
    grid: GridSpec
    time: float = 0.0
    frame: Frame = Frame.COMOVING

    def __post_init__(self) -> None:
        if self.amplitudes.shape != self.grid.shape:
            raise GridMismatchError(
                f"amplitudes of shape {self.amplitudes.shape} on grid {self.grid.shape}"
            )

    def norm(self) -> float:
        total = float(np.sum(np.abs(self.amplitudes) ** 2))
        return math.sqrt(total * self.grid.cell_volume)

    def normalized(self) -> WaveField:
        return replace(self, amplitudes=self.amplitudes / self.norm())

    def density(self) -> NDArray[np.float64]:
        return np.abs(self.amplitudes) ** 2

    def require(self, frame: Frame) -> None:
        if self.frame is not frame:
            raise FrameMismatchError(
                f"expected a {frame.value}-frame field, got {self.frame.value}"
            )


def potential_on_grid(
    grid: GridSpec,
    p: LatticeParams,
    *,
    model: PotentialModel = "full",
    h: HarmonicModel | None = None,
) -> NDArray[np.float64]:
    """U_D (or V_D for ``model="harmonic"``) sampled on the grid.

    Reduced grids sit at y = z = 0.
    """
    x, y, z = grid.coordinates()
    if model == "harmonic":
        if h is None:
            raise ValueError("the harmonic potential needs a HarmonicModel")
        values = h.potential(x, y, z)
    else:
        values = evaluate_potential((x, y, z), p)
    return np.ascontiguousarray(np.broadcast_to(values, grid.shape), dtype=float)


def boundary_ratio(amplitudes: ComplexArray) -> float:
    """max |Ψ| on the window faces relative to max |Ψ|."""
    magnitude = np.abs(amplitudes)
    peak = float(magnitude.max())
    if peak == 0.0:
        return 0.0
    faces = [
        float(np.take(magnitude, index, axis=axis).max())
        for axis in range(magnitude.ndim)
        for index in (0, -1)
    ]
    return max(faces) / peak


class ComovingPropagator:
    """Second-order FSOM step in the comoving frame.

    Potential and kinetic phases are cached per step size; the position and
    momentum kicks are rebuilt every step.
    """

    def __init__(
        self,
        grid: GridSpec,
        potential: NDArray[np.float64],
        *,
        mass: float = 1.0,
        workers: int | None = None,
    ) -> None:
        if potential.shape != grid.shape:
            raise GridMismatchError(
                f"potential of shape {potential.shape} on grid {grid.shape}"
            )
        self.grid = grid
        self.potential = potential
        self.mass = mass
        self.workers = workers
        self._mesh = grid.mesh()
        self._k = grid.wavenumbers()
        self._k2 = sum(k**2 for k in self._k)
        self._half_potential: dict[float, ComplexArray] = {}
        self._kinetic: dict[float, ComplexArray] = {}

    def _phases(self, dt: float) -> tuple[ComplexArray, ComplexArray]:
        if dt not in self._half_potential:
            if len(self._half_potential) >= PHASE_CACHE_SIZE:
                self._half_potential.clear()
                self._kinetic.clear()
            self._half_potential[dt] = np.exp(-0.5j * dt * self.potential / HBAR)
            self._kinetic[dt] = np.exp(-1j * HBAR * self._k2 * dt / (2 * self.mass))
        return self._half_potential[dt], self._kinetic[dt]

    def step(
        self, amplitudes: ComplexArray, dt: float, kick: Sequence[float]
    ) -> ComplexArray:
        """Advance by ``dt`` with velocity change ``kick`` = δq̇_0 per grid axis."""
        half, kinetic = self._phases(dt)
        out = amplitudes * half
        if any(kick):
            position = sum(r * v for r, v in zip(self._mesh, kick, strict=False))
            out = out * np.exp(-1j * self.mass * position / HBAR)
        out = fft.fftn(out, workers=self.workers)
        if any(kick):
            momentum = sum(k * v for k, v in zip(self._k, kick, strict=False))
            out = out * (kinetic * np.exp(-0.5j * momentum * dt))
        else:
            out = out * kinetic
        out = fft.ifftn(out, workers=self.workers)
        return np.asarray(out * half)


def velocity_kick(
    traj: Trajectory, t: float, dt: float, ndim: int
) -> tuple[float, ...]:
    """δq̇_0 = q̇_0(t + dt) - q̇_0(t) on the grid axes (z never moves)."""
    kick = [
        float(traj.velocity(t + dt, axis) - traj.velocity(t, axis)) for axis in AXES
    ]
    return tuple((kick + [0.0])[:ndim])


def fsom_step(
    phi: WaveField,
    traj: Trajectory,
    t: float,
    dt: float,
    potential: LatticeParams | NDArray[np.float64],
    *,
    mass: float = 1.0,
) -> WaveField:
    """One comoving-frame step from ``t`` to ``t + dt``.

    Raises:
        FrameMismatchError: ``phi`` is not in the comoving frame.
        NonFiniteAmplitudeError: the step produced NaN or inf.
    """
    phi.require(Frame.COMOVING)
    values = (
        potential_on_grid(phi.grid, potential)
        if isinstance(potential, LatticeParams)
        else np.asarray(potential, dtype=float)
    )
    stepper = ComovingPropagator(phi.grid, values, mass=mass, workers=1)
    out = stepper.step(phi.amplitudes, dt, velocity_kick(traj, t, dt, phi.grid.ndim))
    if not np.all(np.isfinite(out)):
        raise NonFiniteAmplitudeError(f"non-finite amplitudes at t={t + dt:.6g}")
    return replace(phi, amplitudes=out, time=t + dt)


@dataclass(frozen=True)
class PropagationConfig:
    """Time-stepping controls.

    Without ``dt_initial`` the first step is t_f/max_steps. Steps never exceed
    t_f/min_steps and never fall below t_f/2^20.
    """

    dt_initial: float | None = None
    max_rel_error: float = 1e-4
    min_steps: int = 20
    max_steps: int = 100
    max_substeps: int = 30
    adaptive: bool = True
    boundary_tolerance: float = 1e-6
    boundary_policy: BoundaryPolicy = "abort"
    workers: int | None = 1

    def __post_init__(self) -> None:
        if not self.max_rel_error > 0:
            raise ValueError("max_rel_error must be positive")
        if self.dt_initial is not None and not self.dt_initial > 0:
            raise ValueError("dt_initial must be positive")
        if not 1 <= self.min_steps <= self.max_steps:
            raise ValueError("step bounds need 1 <= min_steps <= max_steps")
        if self.max_substeps < 1:
            raise ValueError("max_substeps must be at least 1")
        if not self.boundary_tolerance > 0:
            raise ValueError("boundary_tolerance must be positive")
        if self.boundary_policy not in ("abort", "warn"):
            raise ValueError(f"unknown boundary policy {self.boundary_policy!r}")


@dataclass(frozen=True, eq=False)
class PropagationResult:
    final: WaveField
    accepted_steps: int
    rejected_steps: int
    snapshots: dict[float, WaveField] = field(default_factory=dict)
    max_boundary_ratio: float = 0.0
    norm_drift: float = 0.0
    diagnostics: tuple[str, ...] = ()


def propagate(
    phi0: WaveField,
    traj: Trajectory,
    potential: NDArray[np.float64],
    cfg: PropagationConfig | None = None,
    *,
    snapshot_times: Sequence[float] = (),
    t_end: float | None = None,
    mass: float = 1.0,
    on_step: Callable[[float], None] | None = None,
) -> PropagationResult:
    """Propagate the comoving-frame state ``phi0`` from its time stamp to ``t_end``.

    ``t_end`` defaults to t_f. Adaptive stepping compares one step of size
    dt with two of dt/2 and accepts the two half steps when their L2
    difference is within ``max_rel_error``.

    Raises:
        StepUnderflowError: dt fell below t_f/2^20 or too many rejections.
        BoundaryContaminationError: boundary amplitude over tolerance with
            the ``abort`` policy.
    """
    cfg = cfg or PropagationConfig()
    phi0.require(Frame.COMOVING)
    t_f = traj.t_f
    grid = phi0.grid
    stepper = ComovingPropagator(grid, potential, mass=mass, workers=cfg.workers)
    weight = math.sqrt(grid.cell_volume)

    dt_max = t_f / cfg.min_steps
    dt_min = t_f * MIN_STEP_FRACTION
    dt = min(cfg.dt_initial or t_f / cfg.max_steps, dt_max)
    if not cfg.adaptive:
        count = max(1, math.ceil(t_f / dt - 1e-9))
        dt = t_f / count

    t_start = phi0.time
    t_end = t_f if t_end is None else t_end
    pending = sorted(t for t in snapshot_times if t_start <= t <= t_end)
    snapshots: dict[float, WaveField] = {}
    while pending and pending[0] <= t_start:
        snapshots[pending.pop(0)] = phi0

    psi = phi0.amplitudes
    norm0 = phi0.norm()
    t = t_start
    accepted = rejected = 0
    max_ratio = boundary_ratio(psi)
    drift = 0.0
    flags: list[str] = []

    def advance(amplitudes: ComplexArray, start: float, h: float) -> ComplexArray:
        return stepper.step(amplitudes, h, velocity_kick(traj, start, h, grid.ndim))

    while t_end - t > 1e-12 * t_f:
        target = pending[0] if pending else t_end
        h = min(dt, target - t)
        if cfg.adaptive:
            rejections = 0
            while True:
                full = advance(psi, t, h)
                half = advance(psi, t, h / 2)
                candidate = advance(half, t + h / 2, h / 2)
                error = float(np.linalg.norm(full - candidate)) * weight / norm0
                if error <= cfg.max_rel_error:
                    break
                rejected += 1
                rejections += 1
                h /= 2
                if h < dt_min or rejections > cfg.max_substeps:
                    raise StepUnderflowError(
                        f"step size {h:.3g} at t={t:.6g} after {rejections} rejections "
                        f"(lower bound {dt_min:.3g})"
                    )
            if error < cfg.max_rel_error / 8:
                dt = min(2 * h, dt_max)
            else:
                dt = h
        else:
            candidate = advance(psi, t, h)

        if not np.all(np.isfinite(candidate)):
            raise NonFiniteAmplitudeError(f"non-finite amplitudes at t={t + h:.6g}")
        psi = candidate
        reached = math.isclose(t + h, target, rel_tol=1e-12, abs_tol=1e-15)
        t = target if reached else t + h
        accepted += 1

        ratio = boundary_ratio(psi)
        max_ratio = max(max_ratio, ratio)
        if ratio > cfg.boundary_tolerance:
            message = f"boundary amplitude ratio {ratio:.3g} at t={t:.6g}"
            if cfg.boundary_policy == "abort":
                raise BoundaryContaminationError(message)
            if "boundary-amplitude" not in flags:
                diagnostics.warning(message)
                flags.append("boundary-amplitude")
        drift = max(drift, abs(float(np.linalg.norm(psi)) * weight - norm0))

        while pending and pending[0] <= t * (1 + 1e-12):
            snapshots[pending.pop(0)] = WaveField(psi, grid, t, Frame.COMOVING)
        if on_step is not None:
            on_step(t)

    if accepted > cfg.max_steps:
        flags.append("step-budget-exceeded")
    logger.debug(
        f"Propagation to t={t_end:.6g}: {accepted} accepted, {rejected} rejected, "
        f"norm drift {drift:.3g}, boundary ratio {max_ratio:.3g}"
    )
    return PropagationResult(
        final=WaveField(psi, grid, t_end, Frame.COMOVING),
        accepted_steps=accepted,
        rejected_steps=rejected,
        snapshots=snapshots,
        max_boundary_ratio=max_ratio,
        norm_drift=drift,
        diagnostics=tuple(flags),
    )


# --- ground states -------------------------------------------------------------


def gaussian_state(
    grid: GridSpec,
    centers: Sequence[float],
    lengths: Sequence[float],
    *,
    frame: Frame = Frame.COMOVING,
) -> WaveField:
    """Normalized product of Gaussians exp(-(r - c)²/(4 l²)) on the grid axes."""
    amplitude: NDArray[np.float64] | float = 1.0
    for r, c, l in zip(grid.mesh(), centers, lengths, strict=False):
        amplitude = amplitude * np.exp(-((r - c) ** 2) / (4 * l**2))
    values = np.broadcast_to(np.asarray(amplitude, dtype=complex), grid.shape).copy()
    return WaveField(values, grid, 0.0, frame).normalized()


def harmonic_ground_state(
    grid: GridSpec, h: HarmonicModel, *, center: Sequence[float] | None = None
) -> WaveField:
    """Analytic ground state of V_D, centred on its minimum unless ``center``."""
    centers = center if center is not None else (h.equilibrium_x, 0.0, 0.0)
    return gaussian_state(grid, centers, (h.l_x, h.l_y, h.l_z))


def double_well_trial(grid: GridSpec, p: LatticeParams, h: HarmonicModel) -> WaveField:
    """Two equal Gaussians on the two deepest minima along x within one cell.

    Falls back to the single-well harmonic state when the cell holds one
    minimum.
    """
    x0 = h.expansion_x
    s = np.linspace(x0 - p.period / 2, x0 + p.period / 2, 4097)
    values = evaluate_potential((s, 0.0, 0.0), p)
    inner = values[1:-1]
    minima = np.flatnonzero((inner < values[:-2]) & (inner < values[2:])) + 1
    if minima.size < 2:
        logger.debug("Single well in the cell, using the harmonic trial state")
        return harmonic_ground_state(grid, h)
    deepest = minima[np.argsort(values[minima])[:2]]
    lengths = (h.l_x, h.l_y, h.l_z)
    wells = [
        gaussian_state(grid, (s[i], 0.0, 0.0), lengths).amplitudes for i in deepest
    ]
    return WaveField(wells[0] + wells[1], grid, 0.0, Frame.COMOVING).normalized()


def energy_expectation(
    phi: WaveField, potential: NDArray[np.float64], *, mass: float = 1.0
) -> float:
    """⟨φ|p²/2m + V|φ⟩ with the kinetic part evaluated spectrally."""
    grid = phi.grid
    k2 = sum(k**2 for k in grid.wavenumbers())
    spectrum = fft.fftn(phi.amplitudes, norm="ortho")
    weight = grid.cell_volume
    kinetic = float(np.sum(np.abs(spectrum) ** 2 * k2)) * HBAR**2 / (2 * mass) * weight
    potential_part = float(np.sum(phi.density() * potential)) * weight
    return (kinetic + potential_part) / phi.norm() ** 2


def _curvature_frequency(
    grid: GridSpec, potential: NDArray[np.float64], mass: float
) -> float:
    """Largest harmonic frequency at the grid minimum from finite differences."""
    index = np.unravel_index(int(np.argmin(potential)), grid.shape)
    best = 0.0
    for axis, d in enumerate(grid.spacings):
        hi = list(index)
        lo = list(index)
        hi[axis] = (index[axis] + 1) % grid.shape[axis]
        lo[axis] = (index[axis] - 1) % grid.shape[axis]
        second = potential[tuple(hi)] - 2 * potential[index] + potential[tuple(lo)]
        curvature = second / d**2
        best = max(best, float(curvature))
    if best <= 0:
        raise ValueError("potential has no confining minimum on the grid")
    return math.sqrt(best / mass)


def ite_ground_state(
    potential: NDArray[np.float64],
    grid: GridSpec,
    *,
    tol_energy: float = 1e-10,
    dtau: float | None = None,
    trial: WaveField | None = None,
    mass: float = 1.0,
    max_iter: int = 200_000,
    workers: int | None = 1,
    history: list[float] | None = None,
) -> tuple[WaveField, float]:
    """Ground state by imaginary-time split-operator evolution.

    Each rung of the dτ ladder (dτ, dτ/2, ... dτ/16) runs until the relative
    energy change per unit imaginary time drops below ``tol_energy``.
    Appends every energy evaluation to ``history`` when given.

    Raises:
        NoConvergenceError: ``max_iter`` iterations without convergence.
    """
    if potential.shape != grid.shape:
        raise GridMismatchError(
            f"potential of shape {potential.shape} on grid {grid.shape}"
        )
    offset = float(potential.min())
    shifted = potential - offset
    if dtau is None or trial is None:
        omega = _curvature_frequency(grid, potential, mass)
        dtau = dtau or 0.1 / omega
    if trial is None:
        index = np.unravel_index(int(np.argmin(potential)), grid.shape)
        centers = [axis[i] for axis, i in zip(grid.axes(), index, strict=True)]
        width = math.sqrt(HBAR / (2 * mass * omega))
        trial = gaussian_state(grid, centers, [width] * grid.ndim)
    psi = trial.normalized().amplitudes
    k2 = sum(k**2 for k in grid.wavenumbers())
    weight = math.sqrt(grid.cell_volume)

    def energy(amplitudes: ComplexArray) -> float:
        field = WaveField(amplitudes, grid, 0.0, Frame.COMOVING)
        return energy_expectation(field, shifted, mass=mass) + offset

    current = energy(psi)
    iterations = 0
    step = dtau
    while step >= dtau / DTAU_LADDER:
        half = np.exp(-0.5 * step * shifted / HBAR)
        kinetic = np.exp(-HBAR * k2 * step / (2 * mass))
        while True:
            if iterations >= max_iter:
                raise NoConvergenceError(
                    f"imaginary-time evolution did not converge in {max_iter} "
                    "iterations"
                )
            momentum = kinetic * fft.fftn(half * psi, workers=workers)
            psi = half * fft.ifftn(momentum, workers=workers)
            psi = psi / (float(np.linalg.norm(psi)) * weight)
            iterations += 1
            updated = energy(psi)
            if history is not None:
                history.append(updated)
            change = abs(updated - current) / max(abs(updated), 1e-300) / step
            current = updated
            if change <= tol_energy:
                break
        step /= 2
    logger.debug(f"ITE converged after {iterations} iterations: E_0={current:.12g}")
    return WaveField(np.asarray(psi), grid, 0.0, Frame.COMOVING), current


# --- overlaps and frames ---------------------------------------------------------


def _check_compatible(a: WaveField, b: WaveField) -> None:
    if a.grid != b.grid:
        raise GridMismatchError("wave fields live on different grids")
    if a.frame is not b.frame:
        raise FrameMismatchError(
            f"cannot compare {a.frame.value} and {b.frame.value} fields"
        )


def overlap(a: WaveField, b: WaveField) -> complex:
    """⟨a|b⟩ with the cell-volume weight."""
    _check_compatible(a, b)
    return complex(np.vdot(a.amplitudes, b.amplitudes) * a.grid.cell_volume)


def fidelity(a: WaveField, b: WaveField) -> float:
    return abs(overlap(a, b)) ** 2


def _shift(
    amplitudes: ComplexArray, grid: GridSpec, q: Sequence[float]
) -> ComplexArray:
    if not any(q):
        return amplitudes
    ramp = sum(k * v for k, v in zip(grid.wavenumbers(), q, strict=False))
    return np.asarray(fft.ifftn(fft.fftn(amplitudes) * np.exp(1j * ramp)))


def _boost(
    amplitudes: ComplexArray,
    grid: GridSpec,
    v: Sequence[float],
    sign: float,
    mass: float,
) -> ComplexArray:
    if not any(v):
        return amplitudes
    position = sum(r * vi for r, vi in zip(grid.mesh(), v, strict=False))
    return np.asarray(amplitudes * np.exp(sign * 1j * mass * position / HBAR))


def _trajectory_state(
    traj: Trajectory, t: float, ndim: int
) -> tuple[list[float], list[float]]:
    q = [float(traj.position(t, axis)) for axis in AXES] + [0.0]
    v = [float(traj.velocity(t, axis)) for axis in AXES] + [0.0]
    return q[:ndim], v[:ndim]


def comoving_transform(
    psi: WaveField, traj: Trajectory, t: float, *, mass: float = 1.0
) -> WaveField:
    """Lab-frame Ψ to comoving Φ = exp(-i m r·q̇_0) exp(i p·q_0) Ψ.

    The shift by q_0 acts first, then the boost.
    """
    psi.require(Frame.LAB)
    q, v = _trajectory_state(traj, t, psi.grid.ndim)
    shifted = _shift(psi.amplitudes, psi.grid, q)
    return WaveField(
        _boost(shifted, psi.grid, v, -1.0, mass), psi.grid, t, Frame.COMOVING
    )


def lab_transform(
    phi: WaveField, traj: Trajectory, t: float, *, mass: float = 1.0
) -> WaveField:
    """Inverse of :func:`comoving_transform`."""
    phi.require(Frame.COMOVING)
    q, v = _trajectory_state(traj, t, phi.grid.ndim)
    unboosted = _boost(phi.amplitudes, phi.grid, v, 1.0, mass)
    return WaveField(
        _shift(unboosted, phi.grid, [-c for c in q]), phi.grid, t, Frame.LAB
    )
