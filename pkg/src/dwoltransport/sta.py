"""STA trajectories from Lewis-Riesenfeld inverse engineering.

Trajectories are polynomials in the scaled time s = t/t_f, one per in-plane
axis, so position, velocity and acceleration come from exact polynomial
differentiation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import TYPE_CHECKING, Literal

import numpy as np
from numpy.polynomial import Polynomial
from numpy.typing import ArrayLike, NDArray
from scipy import optimize

from .errors import AxisMismatchError

if TYPE_CHECKING:
    from .esta import EstaCorrection
    from .lattice import HarmonicModel

logger = logging.getLogger(__name__)

Axis = Literal["x", "y"]
AXES: tuple[Axis, Axis] = ("x", "y")

# Classical path shape: the minimal polynomial with q, q', q'', q''', q''''
# fixed at both ends.
MINIMAL_POLYNOMIAL = Polynomial([0, 0, 0, 0, 0, 126, -420, 540, -315, 70])
_B_CONSTANT = np.array([0.0, 0.0, 126.0, -420.0, 540.0, -315.0, 70.0])
_B_INVERSE_SQUARE = np.array([2520.0, -12600.0, 22680.0, -17640.0, 5040.0, 0.0, 0.0])


class TransportDirection(str, Enum):
    X = "x"
    Y = "y"
    DIAGONAL = "diagonal"


class Provenance(str, Enum):
    STA = "sta"
    ESTA = "esta"
    STATIC = "static"


@dataclass(frozen=True)
class TransportSpec:
    direction: TransportDirection
    distance: float
    t_f: float

    def __post_init__(self) -> None:
        if not self.distance > 0:
            raise ValueError(f"distance must be positive, got {self.distance}")
        if not self.t_f > 0:
            raise ValueError(f"t_f must be positive, got {self.t_f}")

    def components(self) -> dict[Axis, float]:
        """Distance per axis; the diagonal splits d_r into d_r/√2 on x and y."""
        if self.direction is TransportDirection.X:
            return {"x": self.distance, "y": 0.0}
        if self.direction is TransportDirection.Y:
            return {"x": 0.0, "y": self.distance}
        leg = self.distance / math.sqrt(2)
        return {"x": leg, "y": leg}

    def moving_axes(self) -> tuple[Axis, ...]:
        return tuple(axis for axis, d in self.components().items() if d != 0.0)


def _time_derivative(
    poly: Polynomial, t_f: float, t: ArrayLike, order: int
) -> NDArray[np.float64]:
    s = np.asarray(t, dtype=float) / t_f
    if not order:
        return np.asarray(poly(s))
    return np.asarray(poly.deriv(order)(s) / t_f**order)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Path q_0(t) of the moving potential minimum.

    ``x`` and ``y`` are polynomials in s = t/t_f. ``omegas`` and ``distances``
    record what the protocol was designed for.
    """

    t_f: float
    x: Polynomial
    y: Polynomial
    omegas: tuple[float, float] = (math.nan, math.nan)
    distances: tuple[float, float] = (0.0, 0.0)
    provenance: Provenance = Provenance.STA
    correction: EstaCorrection | None = None

    @classmethod
    def stationary(cls, t_f: float) -> Trajectory:
        zero = Polynomial([0.0])
        return cls(t_f=t_f, x=zero, y=zero, provenance=Provenance.STATIC)

    def polynomial(self, axis: Axis) -> Polynomial:
        return self.x if axis == "x" else self.y

    def coefficients(self, axis: Axis) -> NDArray[np.float64]:
        """Ascending coefficients in s."""
        return np.asarray(self.polynomial(axis).coef, dtype=float)

    def position(self, t: ArrayLike, axis: Axis) -> NDArray[np.float64]:
        return _time_derivative(self.polynomial(axis), self.t_f, t, 0)

    def velocity(self, t: ArrayLike, axis: Axis) -> NDArray[np.float64]:
        return _time_derivative(self.polynomial(axis), self.t_f, t, 1)

    def acceleration(self, t: ArrayLike, axis: Axis) -> NDArray[np.float64]:
        return _time_derivative(self.polynomial(axis), self.t_f, t, 2)

    def derivative(self, t: ArrayLike, axis: Axis, order: int) -> NDArray[np.float64]:
        return _time_derivative(self.polynomial(axis), self.t_f, t, order)

    def sample(self, t: ArrayLike) -> NDArray[np.float64]:
        """Table of (q_x, q_y, q̇_x, q̇_y, q̈_x, q̈_y) with shape (6, *t.shape)."""
        return np.stack(
            [
                self.position(t, "x"),
                self.position(t, "y"),
                self.velocity(t, "x"),
                self.velocity(t, "y"),
                self.acceleration(t, "x"),
                self.acceleration(t, "y"),
            ]
        )

    def moves(self, axis: Axis) -> bool:
        return bool(np.any(self.coefficients(axis) != 0.0))

    def scaled(self, factor: float) -> Trajectory:
        return replace(
            self,
            x=self.x * factor,
            y=self.y * factor,
            distances=(self.distances[0] * factor, self.distances[1] * factor),
        )


def sta_coefficients(omega: float, t_f: float) -> NDArray[np.float64]:
    """Coefficients b_3..b_9 of the STA polynomial q_0 = d Σ b_n s^n."""
    if not (omega > 0 and t_f > 0):
        raise ValueError("omega and t_f must be positive")
    return _B_CONSTANT + _B_INVERSE_SQUARE / (t_f * omega) ** 2


def _axis_polynomial(distance: float, omega: float, t_f: float) -> Polynomial:
    if distance == 0.0:
        return Polynomial([0.0])
    coef = np.zeros(10)
    coef[3:] = distance * sta_coefficients(omega, t_f)
    return Polynomial(coef)


def design_sta(spec: TransportSpec, h: HarmonicModel) -> Trajectory:
    """STA trajectory for the harmonic model ``h``; diagonal specs move both axes."""
    legs = spec.components()
    trajectory = Trajectory(
        t_f=spec.t_f,
        x=_axis_polynomial(legs["x"], h.omega_x, spec.t_f),
        y=_axis_polynomial(legs["y"], h.omega_y, spec.t_f),
        omegas=(h.omega_x, h.omega_y),
        distances=(legs["x"], legs["y"]),
        provenance=Provenance.STA,
    )
    logger.debug(
        f"STA design: direction={spec.direction.value}, d={spec.distance:.6g}, "
        f"t_f={spec.t_f:.6g}, t_f*omega_x={spec.t_f * h.omega_x:.4g}"
    )
    return trajectory


@dataclass(frozen=True, eq=False)
class ClassicalPath:
    """Classical path q_c(t) = d P(s) + offset of the forced oscillator."""

    t_f: float
    poly: Polynomial
    offset: float

    def position(self, t: ArrayLike) -> NDArray[np.float64]:
        return _time_derivative(self.poly, self.t_f, t, 0) + self.offset

    def velocity(self, t: ArrayLike) -> NDArray[np.float64]:
        return _time_derivative(self.poly, self.t_f, t, 1)

    def acceleration(self, t: ArrayLike) -> NDArray[np.float64]:
        return _time_derivative(self.poly, self.t_f, t, 2)

    def action_integral(self, t: ArrayLike) -> NDArray[np.float64]:
        """∫_0^t q̇_c(t')² dt', exact."""
        squared = self.poly.deriv() ** 2
        s = np.asarray(t, dtype=float) / self.t_f
        return np.asarray(squared.integ(lbnd=0.0)(s) / self.t_f)


def classical_path(traj: Trajectory, h: HarmonicModel, axis: Axis) -> ClassicalPath:
    """Classical path along ``axis`` of an STA trajectory.

    On x the path is offset by -a_x/ω_x² so that
    q̈_c + ω²(q_c - q_0) = -a_x holds identically (0 on y).

    Raises:
        AxisMismatchError: ``traj`` is not an STA design for ``h``'s frequency.
    """
    index = AXES.index(axis)
    omega = h.omega_x if axis == "x" else h.omega_y
    offset = -h.a_x / h.omega_x**2 if axis == "x" else 0.0
    if traj.provenance is Provenance.STATIC and not traj.moves(axis):
        return ClassicalPath(traj.t_f, Polynomial([0.0]), offset)
    if traj.provenance is not Provenance.STA:
        raise AxisMismatchError(
            f"classical path needs an STA trajectory, got {traj.provenance.value}"
        )
    distance = traj.distances[index]
    if distance != 0.0 and not math.isclose(
        traj.omegas[index], omega, rel_tol=1e-12
    ):
        raise AxisMismatchError(
            f"trajectory designed for omega_{axis}={traj.omegas[index]:.12g}, "
            f"model has {omega:.12g}"
        )
    return ClassicalPath(traj.t_f, MINIMAL_POLYNOMIAL * distance, offset)


def peak_acceleration(traj: Trajectory, samples: int = 4097) -> float:
    """max_t |q̈_0(t)| (Euclidean over x and y)."""
    s = np.linspace(0.0, 1.0, samples)
    candidates = [s]
    for axis in AXES:
        jerk = traj.polynomial(axis).deriv(3)
        if jerk.degree() > 0:
            roots = jerk.roots()
            real = roots[np.abs(roots.imag) < 1e-12].real
            candidates.append(real[(real >= 0.0) & (real <= 1.0)])
    points = np.concatenate(candidates) * traj.t_f
    ax = traj.acceleration(points, "x")
    ay = traj.acceleration(points, "y")
    return float(np.max(np.hypot(ax, ay)))


def min_transport_time(spec: TransportSpec, h: HarmonicModel, a_limit: float) -> float:
    """Shortest t_f whose STA protocol keeps peak acceleration below ``a_limit``.

    The peak acceleration falls roughly like t_f⁻², so the root is bracketed by
    doubling from one oscillation period.
    """
    if not a_limit > 0:
        raise ValueError("a_limit must be positive")

    def excess(t_f: float) -> float:
        trial = replace(spec, t_f=t_f)
        return peak_acceleration(design_sta(trial, h)) - a_limit

    lo = hi = h.t_x
    while excess(hi) > 0:
        hi *= 2
    while excess(lo) < 0 and lo > 1e-6 * h.t_x:
        lo /= 2
    if excess(lo) < 0:
        return lo
    return float(optimize.brentq(excess, lo, hi, xtol=1e-12 * h.t_x))
