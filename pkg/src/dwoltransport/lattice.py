"""Double-well optical lattice potential and its harmonic approximation.

All quantities are in internal units (ħ = 1, see :mod:`dwoltransport.units`).
The potential is

    U_D = -u_d0 * (U_par + U_perp + U_z + U_cr)

with the four dimensionless contributions returned by
:func:`evaluate_potential_terms`.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import Literal, NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import NonConfiningError
from .units import HBAR

logger = logging.getLogger(__name__)
diagnostics = logging.getLogger("dwoltransport.diagnostics")

Direction = Literal["x", "y"]
HarmonicForm = Literal["exact", "printed"]

# Validity thresholds for the harmonic model ("much smaller/larger than").
XI_WAIST_RATIO_LIMIT = 0.01
PARAXIAL_LIMIT = 10.0
RAYLEIGH_LIMIT = 10.0


@dataclass(frozen=True)
class LatticeParams:
    """Physical definition of the lattice.

    ``u_d0`` is an energy, the angles are in radians, ``k_L``/``k_z`` are wave
    numbers and the waists/Rayleigh lengths are lengths. Rayleigh lengths left
    at NaN default to the Gaussian-beam value k_z * w0**2 / 2. Infinite waists
    describe plane-wave beams.
    """

    u_d0: float
    beta: float
    theta: float
    phi: float
    xi_z: float = 0.0
    k_L: float = 1.0
    k_z: float = 1.0
    w0x: float = math.inf
    w0y: float = math.inf
    z_Rx: float = field(default=math.nan)
    z_Ry: float = field(default=math.nan)
    mass: float = 1.0

    def __post_init__(self) -> None:
        if not self.u_d0 >= 0:
            raise ValueError(f"u_d0 must be non-negative, got {self.u_d0}")
        if not 0.0 <= self.beta <= math.pi / 2:
            raise ValueError(f"beta must lie in [0, pi/2], got {self.beta}")
        if not -math.pi <= self.theta <= math.pi:
            raise ValueError(f"theta must lie in [-pi, pi], got {self.theta}")
        if not math.isfinite(self.phi):
            raise ValueError("phi must be finite")
        if not self.xi_z >= 0:
            raise ValueError(f"xi_z must be non-negative, got {self.xi_z}")
        for name in ("k_L", "k_z", "w0x", "w0y", "mass"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if math.isnan(self.z_Rx):
            object.__setattr__(self, "z_Rx", self.k_z * self.w0x**2 / 2)
        if math.isnan(self.z_Ry):
            object.__setattr__(self, "z_Ry", self.k_z * self.w0y**2 / 2)
        if not (self.z_Rx > 0 and self.z_Ry > 0):
            raise ValueError("Rayleigh lengths must be strictly positive")

    @property
    def e_r(self) -> float:
        """Recoil energy ħ²k_L²/(2m)."""
        return HBAR**2 * self.k_L**2 / (2 * self.mass)

    @property
    def period(self) -> float:
        """Lattice period 2π/k_L along x and y."""
        return 2 * math.pi / self.k_L


class PotentialTerms(NamedTuple):
    parallel: NDArray[np.float64]
    perpendicular: NDArray[np.float64]
    z: NDArray[np.float64]
    cross: NDArray[np.float64]


def _inverse_square(length: float) -> float:
    return 0.0 if math.isinf(length) else 1.0 / length**2


def evaluate_potential_terms(
    r: Sequence[ArrayLike], p: LatticeParams, *, frozen_waists: bool = False
) -> PotentialTerms:
    """Return the dimensionless terms (U_par, U_perp, U_z, U_cr) at r = (x, y, z).

    Coordinates broadcast against each other. With ``frozen_waists`` the
    beam waists keep their focal values w_u0 at every z.
    """
    x, y, z = (np.asarray(c, dtype=float) for c in r)
    c = math.cos(p.beta / 2)
    s = math.sin(p.beta / 2)
    k = p.k_L

    parallel = c**2 * (np.cos(2 * k * y) - np.cos(2 * k * x) + 2)
    perpendicular = 2 * s**2 * (np.cos(k * y) - np.sin(k * x - p.theta)) ** 2

    if frozen_waists:
        ratio_x = np.ones_like(z)
        ratio_y = np.ones_like(z)
    else:
        # w_u0 / w_u(z)
        ratio_x = 1.0 / np.sqrt(1.0 + z**2 * _inverse_square(p.z_Rx))
        ratio_y = 1.0 / np.sqrt(1.0 + z**2 * _inverse_square(p.z_Ry))
    exponent = (
        x**2 * _inverse_square(p.w0x) * ratio_x**2
        + y**2 * _inverse_square(p.w0y) * ratio_y**2
    )
    gauss = np.exp(-exponent)
    cos_z = np.cos(p.k_z * z)

    z_term = p.xi_z * ratio_x * ratio_y * cos_z**2 * gauss**2
    cross = (
        2
        * math.sqrt(p.xi_z)
        * c
        * np.sqrt(ratio_x * ratio_y)
        * gauss
        * cos_z
        * (math.cos(p.phi / 2) * np.cos(k * y) - math.sin(p.phi / 2) * np.sin(k * x))
    )
    shape = np.broadcast_shapes(x.shape, y.shape, z.shape)
    return PotentialTerms(
        np.broadcast_to(parallel, shape),
        np.broadcast_to(perpendicular, shape),
        np.broadcast_to(z_term, shape),
        np.broadcast_to(cross, shape),
    )


def evaluate_potential(
    r: Sequence[ArrayLike], p: LatticeParams, *, frozen_waists: bool = False
) -> NDArray[np.float64]:
    """Full lattice potential U_D at r = (x, y, z)."""
    terms = evaluate_potential_terms(r, p, frozen_waists=frozen_waists)
    return -p.u_d0 * (terms.parallel + terms.perpendicular + terms.z + terms.cross)


def expansion_point(p: LatticeParams) -> tuple[float, float, float]:
    """Point (-π/(2k_L), 0, 0) about which the harmonic model is built."""
    return (-math.pi / (2 * p.k_L), 0.0, 0.0)


@dataclass(frozen=True)
class HarmonicModel:
    """Quadratic model V_D of the lattice about the expansion point.

    V_D = -v_d0 + m a_x x' + m/2 (ω_x² x'² + ω_y² y² + ω_z² z²)
    with x' = x + π/(2k_L).
    In planar models an unconfined z axis has ``omega_z == 0`` and
    ``l_z == inf``.
    """

    v_d0: float
    omega_x: float
    omega_y: float
    omega_z: float
    a_x: float
    l_x: float
    l_y: float
    l_z: float
    t_x: float
    t_y: float
    e_r: float
    mass: float = 1.0
    k_L: float = 1.0
    form: HarmonicForm = "exact"
    warnings: tuple[str, ...] = ()

    @property
    def expansion_x(self) -> float:
        return -math.pi / (2 * self.k_L)

    @property
    def equilibrium_x(self) -> float:
        """Minimum of V_D along x: the expansion point shifted by -a_x/ω_x²."""
        return self.expansion_x - self.a_x / self.omega_x**2

    @property
    def omegas(self) -> tuple[float, float, float]:
        return (self.omega_x, self.omega_y, self.omega_z)

    def potential(
        self, x: ArrayLike, y: ArrayLike = 0.0, z: ArrayLike = 0.0
    ) -> NDArray[np.float64]:
        xs = np.asarray(x, dtype=float) - self.expansion_x
        ys = np.asarray(y, dtype=float)
        zs = np.asarray(z, dtype=float)
        m = self.mass
        return np.asarray(
            -self.v_d0
            + m * self.a_x * xs
            + 0.5
            * m
            * (
                self.omega_x**2 * xs**2
                + self.omega_y**2 * ys**2
                + self.omega_z**2 * zs**2
            )
        )

    def energy(
        self, n: tuple[int, int, int] = (0, 0, 0), *, include_depth: bool = True
    ) -> float:
        """Eigenvalue of V_D's oscillator including the linear-term offset.

        ``include_depth=False`` drops the constant -v_d0.
        """
        quanta = sum(w * (k + 0.5) for w, k in zip(self.omegas, n, strict=True))
        value = HBAR * quanta - self.mass * self.a_x**2 / (2 * self.omega_x**2)
        return value - self.v_d0 if include_depth else value


class _Expansion(NamedTuple):
    v_d0: float
    force_x: float
    kxx: float
    kyy: float
    kzz: float


def _exact_expansion(p: LatticeParams) -> _Expansion:
    """Value, x-gradient and Hessian diagonal of U_D at the expansion point."""
    u = p.u_d0
    c, s = math.cos(p.beta / 2), math.sin(p.beta / 2)
    k, kz = p.k_L, p.k_z
    xi, sq = p.xi_z, math.sqrt(p.xi_z)
    x0 = -math.pi / (2 * k)
    iwx, iwy = _inverse_square(p.w0x), _inverse_square(p.w0y)
    izx, izy = _inverse_square(p.z_Rx), _inverse_square(p.z_Ry)
    ex = math.exp(-(x0**2) * iwx)
    half_c, half_s = math.cos(p.phi / 2), math.sin(p.phi / 2)
    h0 = half_c + half_s
    g0 = 1 + math.cos(p.theta)

    value = 4 * c**2 + 2 * s**2 * g0**2 + xi * ex**2 + 2 * sq * c * ex * h0

    grad = (
        4 * s**2 * k * g0 * math.sin(p.theta)
        - 4 * xi * x0 * iwx * ex**2
        - 4 * sq * c * x0 * iwx * ex * h0
    )

    dxx = (
        -4 * k**2 * c**2
        + 4 * s**2 * k**2 * (math.sin(p.theta) ** 2 - g0 * math.cos(p.theta))
        + xi * ex**2 * (16 * x0**2 * iwx**2 - 4 * iwx)
        + 2 * sq * c * ex * ((4 * x0**2 * iwx**2 - 2 * iwx) * h0 - k**2 * half_s)
    )
    dyy = (
        -4 * k**2 * c**2
        - 4 * s**2 * k**2 * g0
        - 4 * xi * ex**2 * iwy
        + 2 * sq * c * ex * (-2 * iwy * h0 - k**2 * half_c)
    )
    dzz = xi * ex**2 * (-(izx + izy) - 2 * kz**2 + 4 * x0**2 * iwx * izx) + (
        2 * sq * c * h0 * ex * (-0.5 * (izx + izy) - kz**2 + 2 * x0**2 * iwx * izx)
    )
    return _Expansion(u * value, -u * grad, -u * dxx, -u * dyy, -u * dzz)


def _printed_expansion(p: LatticeParams) -> _Expansion:
    u = p.u_d0
    c, s = math.cos(p.beta / 2), math.sin(p.beta / 2)
    k, kz, th = p.k_L, p.k_z, p.theta
    v_d0 = 4 * u * (c**2 + 2 * math.cos(th / 2) ** 4 * s**2)
    kxx = 4 * u * k**2 * ((math.cos(th) + math.cos(2 * th)) * s**2 + c**2)
    kyy = 4 * u * k**2 * (1 + math.cos(th) * s)
    kzz = (
        2
        * u
        * kz**2
        * (p.xi_z + math.sqrt(p.xi_z) * (math.cos(p.phi / 2) + math.sin(p.phi / 2)))
    )
    force_x = -4 * u * k * s**2 * (1 + math.cos(th)) * math.sin(th)
    return _Expansion(v_d0, force_x, kxx, kyy, kzz)


def _zero_point_length(omega: float, mass: float) -> float:
    return math.sqrt(HBAR / (2 * mass * omega)) if omega > 0 else math.inf


def harmonic_approximation(
    p: LatticeParams, *, form: HarmonicForm = "exact", planar: bool = False
) -> HarmonicModel:
    """Build the harmonic model of ``p`` about (-π/(2k_L), 0, 0).

    ``form="exact"`` uses the Hessian of :func:`evaluate_potential` including
    the Gaussian-envelope and Rayleigh-length contributions; ``"printed"``
    keeps only the leading lattice terms. ``planar`` skips the z confinement
    check for x-y reductions.

    Raises:
        NonConfiningError: a required squared frequency is not positive.
    """
    expansion = _exact_expansion(p) if form == "exact" else _printed_expansion(p)
    m = p.mass
    squared = {
        "x": expansion.kxx / m,
        "y": expansion.kyy / m,
        "z": expansion.kzz / m,
    }
    required = ("x", "y") if planar else ("x", "y", "z")
    for axis in required:
        if not squared[axis] > 0:
            raise NonConfiningError(
                f"omega_{axis}^2 = {squared[axis]:.6g} is not positive "
                f"(u_d0={p.u_d0:g}, beta={p.beta:g}, theta={p.theta:g})"
            )
    omega_x, omega_y = math.sqrt(squared["x"]), math.sqrt(squared["y"])
    omega_z = math.sqrt(squared["z"]) if squared["z"] > 0 else 0.0
    l_x, l_y = _zero_point_length(omega_x, m), _zero_point_length(omega_y, m)
    l_z = _zero_point_length(omega_z, m)

    warnings: list[str] = []
    if omega_z == 0.0:
        warnings.append("z-unconfined")
    if p.xi_z > XI_WAIST_RATIO_LIMIT * min(p.w0x / l_x, p.w0y / l_y):
        warnings.append("xi_z-not-small")
    if p.k_z * min(p.w0x, p.w0y) < PARAXIAL_LIMIT:
        warnings.append("non-paraxial")
    if math.isfinite(l_z) and min(p.z_Rx, p.z_Ry) < RAYLEIGH_LIMIT * l_z:
        warnings.append("short-rayleigh-length")
    for flag in warnings:
        diagnostics.warning(f"harmonic model validity: {flag}")

    logger.debug(
        f"Harmonic model ({form}): omega=({omega_x:.6g}, {omega_y:.6g}, "
        f"{omega_z:.6g}), a_x={expansion.force_x / m:.6g}"
    )
    return HarmonicModel(
        v_d0=expansion.v_d0,
        omega_x=omega_x,
        omega_y=omega_y,
        omega_z=omega_z,
        a_x=expansion.force_x / m,
        l_x=l_x,
        l_y=l_y,
        l_z=l_z,
        t_x=2 * math.pi / omega_x,
        t_y=2 * math.pi / omega_y,
        e_r=p.e_r,
        mass=m,
        k_L=p.k_L,
        form=form,
        warnings=tuple(warnings),
    )


def reference_lattice(
    u_d0_er: float,
    *,
    beta: float = 3 * math.pi / 20,
    theta: float = math.pi / 2,
    phi: float = math.pi / 2,
    xi_z: float = 0.0,
    waist_lx: float = 4.2e3,
) -> LatticeParams:
    """Lattice in recoil units (k_L = m = 1) with waists given in l_x.

    l_x is taken from the plane-wave (infinite-waist) model so the waists do
    not depend on themselves.
    """
    plane = LatticeParams(
        u_d0=u_d0_er * 0.5, beta=beta, theta=theta, phi=phi, xi_z=xi_z
    )
    l_x = harmonic_approximation(plane, planar=True).l_x
    waist = waist_lx * l_x
    return LatticeParams(
        u_d0=plane.u_d0,
        beta=beta,
        theta=theta,
        phi=phi,
        xi_z=xi_z,
        w0x=waist,
        w0y=waist,
    )


def _line_scan(
    p: LatticeParams, direction: Direction, half_width: float, samples: int
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    x0, _, _ = expansion_point(p)
    s = np.linspace(-half_width, half_width, samples)
    if direction == "x":
        values = evaluate_potential((x0 + s, 0.0, 0.0), p)
    else:
        values = evaluate_potential((x0, s, 0.0), p)
    return s, np.asarray(values)


def _count_minima(values: NDArray[np.float64]) -> int:
    inner = values[1:-1]
    return int(np.count_nonzero((inner < values[:-2]) & (inner < values[2:])))


def _largest_tilt(
    s: NDArray[np.float64],
    values: NDArray[np.float64],
    mass: float,
    holds: Callable[[int], bool],
    rel_tol: float = 1e-10,
) -> float:
    """Largest |a| for which ``holds(#minima)`` survives a tilt m*a*s of either sign."""
    if not holds(_count_minima(values)):
        return 0.0
    slope = np.max(np.abs(np.gradient(values, s)))
    if slope == 0:
        return 0.0
    limits = []
    for sign in (1.0, -1.0):
        lo, hi = 0.0, 1.5 * slope / mass
        while hi - lo > rel_tol * hi:
            mid = 0.5 * (lo + hi)
            if holds(_count_minima(values + sign * mass * mid * s)):
                lo = mid
            else:
                hi = mid
        limits.append(lo)
    return min(limits)


def critical_acceleration(
    p: LatticeParams, direction: Direction = "x", *, samples: int = 8193
) -> float:
    """Largest |a| for which U_D + m a r_direction keeps a local minimum.

    The scan covers one lattice period on either side of the expansion point.
    """
    s, values = _line_scan(p, direction, p.period, samples)
    a_max = _largest_tilt(s, values, p.mass, lambda count: count >= 1)
    logger.debug(f"Critical acceleration along {direction}: {a_max:.6g}")
    return a_max


def intermediate_barrier_acceleration(
    p: LatticeParams, *, samples: int = 8193
) -> float:
    """Largest |a| along x for which both wells of one double well survive.

    Beyond this tilt the barrier between the two wells of a unit cell stops
    being a local maximum. Returns 0 when the untilted cell has a single well.
    """
    s = np.linspace(-p.period / 2, p.period / 2, samples)
    values = np.asarray(evaluate_potential((s, 0.0, 0.0), p))
    a_int = _largest_tilt(s, values, p.mass, lambda count: count >= 2)
    logger.debug(f"Intermediate barrier acceleration: {a_int:.6g}")
    return a_int
