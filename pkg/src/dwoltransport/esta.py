"""Enhanced STA: transport modes, G_n, K_n and the correction vector ε.

U_D and V_D are written as sums of separable products f_x(u) f_y(v) f_z(z)
in lattice-relative coordinates u = x - q_0,x, v = y - q_0,y. Every 1D factor
is a sum of :class:`~dwoltransport.hermite.Monomial`, so each spatial matrix
element between transport modes is a product of closed-form Hermite integrals.
Only the time integral is done numerically.
"""

from __future__ import annotations

import itertools
import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace
from typing import Any, Literal

import numpy as np
from numpy.polynomial import Polynomial
from numpy.typing import ArrayLike, NDArray
from scipy import integrate, linalg, special

from .errors import (
    DegenerateCorrectionError,
    QuadratureFailureError,
    SingularSystemError,
)
from .hermite import (
    SQRT2,
    Factor,
    InPlaceArgs,
    IntegralForm,
    IntegralKind,
    Monomial,
    cosine,
    cross_z_factor,
    evaluate_factor,
    factor_derivative,
    hermite_integral,
    mode_matrix_element,
    sine,
)
from .lattice import HarmonicModel, LatticeParams, harmonic_approximation
from .sta import (
    AXES,
    Axis,
    ClassicalPath,
    Provenance,
    Trajectory,
    TransportSpec,
    classical_path,
    design_sta,
)
from .units import HBAR

logger = logging.getLogger(__name__)
diagnostics = logging.getLogger("dwoltransport.diagnostics")

KNOT_COUNT = 6
CONTROL_SIZE = 2 * KNOT_COUNT
EXACT_DEGREE = 15
LEAST_SQUARES_DEGREE = 11
ENDPOINT_DERIVATIVES = 4
MAX_PANELS = 2**15
SQRT_PI = math.sqrt(math.pi)

BasisPolicy = Literal["exact", "least_squares"]
BASIS_POLICIES: tuple[BasisPolicy, ...] = ("exact", "least_squares")


@dataclass(frozen=True, order=True)
class ModeIndex:
    n_x: int
    n_y: int = 0
    n_z: int = 0

    def __post_init__(self) -> None:
        if min(self.n_x, self.n_y, self.n_z) < 0:
            raise ValueError("mode indices must be non-negative")

    @property
    def total(self) -> int:
        return self.n_x + self.n_y + self.n_z

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.n_x, self.n_y, self.n_z)

    def __str__(self) -> str:
        return f"({self.n_x},{self.n_y},{self.n_z})"


def enumerate_modes(cutoff: int, dims: int = 3) -> tuple[ModeIndex, ...]:
    """Modes with 1 ≤ n_x + n_y + n_z ≤ cutoff on the first ``dims`` axes."""
    if cutoff < 1:
        raise ValueError("cutoff must be at least 1")
    ranges = [range(cutoff + 1) if axis < dims else range(1) for axis in range(3)]
    modes = [
        ModeIndex(*n) for n in itertools.product(*ranges) if 1 <= sum(n) <= cutoff
    ]
    return tuple(sorted(modes, key=lambda m: (m.total, -m.n_x, -m.n_y)))


# --- separable decomposition -------------------------------------------------

ONE: Factor = (Monomial(1.0),)


@dataclass(frozen=True)
class SeparableTerm:
    """coef · f_x(u) · f_y(v) · f_z(z)."""

    coef: float
    fx: Factor = ONE
    fy: Factor = ONE
    fz: Factor = ONE

    def factor(self, axis: int) -> Factor:
        return (self.fx, self.fy, self.fz)[axis]

    def with_factor(self, axis: int, factor: Factor) -> SeparableTerm:
        name = ("fx", "fy", "fz")[axis]
        return replace(self, **{name: factor})


def _scaled(factor: Factor, c: complex) -> Factor:
    return tuple(replace(m, coef=m.coef * c) for m in factor)


def _inverse_square(length: float) -> float:
    return 0.0 if math.isinf(length) else 1.0 / length**2


def lattice_terms(p: LatticeParams) -> tuple[SeparableTerm, ...]:
    """U_D with frozen waists as a sum of separable terms in (u, v, z)."""
    u0 = p.u_d0
    c, s = math.cos(p.beta / 2), math.sin(p.beta / 2)
    k, kz = p.k_L, p.k_z
    terms = [
        # parallel: c²[cos 2kv - cos 2ku + 2]
        SeparableTerm(-u0 * c**2, fy=cosine(2 * k)),
        SeparableTerm(u0 * c**2, fx=cosine(2 * k)),
        # constant parts of parallel and perpendicular
        SeparableTerm(-u0 * (2 * c**2 + 2 * s**2)),
        # perpendicular: 2s²[½cos 2kv - 2 cos kv sin(ku-θ) - ½cos(2ku-2θ)]
        SeparableTerm(-u0 * s**2, fy=cosine(2 * k)),
        SeparableTerm(4 * u0 * s**2, fx=sine(k, p.theta), fy=cosine(k)),
        SeparableTerm(u0 * s**2, fx=cosine(2 * k, 2 * p.theta)),
    ]
    if p.xi_z > 0:
        gx2, gy2 = 2 * _inverse_square(p.w0x), 2 * _inverse_square(p.w0y)
        gx1, gy1 = gx2 / 2, gy2 / 2
        cos2_z = (Monomial(0.5), *_scaled(cosine(2 * kz), 0.5))
        terms.append(
            SeparableTerm(
                -u0 * p.xi_z,
                fx=(Monomial(1.0, gamma=gx2),),
                fy=(Monomial(1.0, gamma=gy2),),
                fz=cos2_z,
            )
        )
        cross = 2 * math.sqrt(p.xi_z) * c
        terms.append(
            SeparableTerm(
                -u0 * cross * math.cos(p.phi / 2),
                fx=(Monomial(1.0, gamma=gx1),),
                fy=cosine(k, gamma=gy1),
                fz=cosine(kz),
            )
        )
        terms.append(
            SeparableTerm(
                u0 * cross * math.sin(p.phi / 2),
                fx=sine(k, gamma=gx1),
                fy=(Monomial(1.0, gamma=gy1),),
                fz=cosine(kz),
            )
        )
    return tuple(terms)


def harmonic_terms(h: HarmonicModel) -> tuple[SeparableTerm, ...]:
    """V_D as separable terms in (u, v, z)."""
    m, x0 = h.mass, h.expansion_x
    return (
        SeparableTerm(-h.v_d0),
        SeparableTerm(m * h.a_x, fx=(Monomial(1.0, power=1, origin=x0),)),
        SeparableTerm(0.5 * m * h.omega_x**2, fx=(Monomial(1.0, power=2, origin=x0),)),
        SeparableTerm(0.5 * m * h.omega_y**2, fy=(Monomial(1.0, power=2),)),
        SeparableTerm(0.5 * m * h.omega_z**2, fz=(Monomial(1.0, power=2),)),
    )


def difference_terms(p: LatticeParams, h: HarmonicModel) -> tuple[SeparableTerm, ...]:
    """U_D - V_D."""
    negated = tuple(replace(t, coef=-t.coef) for t in harmonic_terms(h))
    return lattice_terms(p) + negated


def gradient_terms(
    terms: Sequence[SeparableTerm], axis: int
) -> tuple[SeparableTerm, ...]:
    out = []
    for term in terms:
        derivative = factor_derivative(term.factor(axis))
        if derivative:
            out.append(term.with_factor(axis, derivative))
    return tuple(out)


def evaluate_terms(
    terms: Sequence[SeparableTerm], u: ArrayLike, v: ArrayLike, z: ArrayLike
) -> NDArray[np.float64]:
    """Pointwise value of a separable sum (real part)."""
    total: Any = 0.0
    for term in terms:
        total = total + term.coef * (
            evaluate_factor(term.fx, u)
            * evaluate_factor(term.fy, v)
            * evaluate_factor(term.fz, z)
        )
    return np.asarray(np.real(total))


# --- transport modes ---------------------------------------------------------


def _mode_centres(
    h: HarmonicModel,
    paths: Sequence[ClassicalPath],
    t: ArrayLike,
    printed_y_shift: bool,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    shift = math.pi / (2 * h.k_L)
    cx = paths[0].position(t) - shift
    cy = paths[1].position(t) - (shift if printed_y_shift else 0.0)
    return cx, cy


def _oscillator_state(
    n: int, coordinate: ArrayLike, length: float
) -> NDArray[np.float64]:
    xi = np.asarray(coordinate, dtype=float) / (math.sqrt(2) * length)
    norm = 1.0 / math.sqrt(2.0**n * math.factorial(n) * math.sqrt(2 * math.pi) * length)
    return np.asarray(norm * special.eval_hermite(n, xi) * np.exp(-(xi**2) / 2))


def transport_mode(
    n: ModeIndex,
    h: HarmonicModel,
    paths: Sequence[ClassicalPath],
    t: float,
    r: Sequence[ArrayLike],
    *,
    dims: int = 3,
    printed_y_shift: bool = False,
) -> NDArray[np.complex128]:
    """Transport-mode wavefunction ⟨r|Ψ_n(t)⟩ of the driven harmonic model.

    ``paths`` holds the classical paths along x and y. The x centre is
    q_c,x - π/(2k_L); the y centre is q_c,y unless ``printed_y_shift``.
    Reduced ``dims`` drop the trailing axes from the product.
    """
    x, y, z = (np.asarray(c, dtype=float) for c in r)
    cx, cy = _mode_centres(h, paths, t, printed_y_shift)
    vx, vy = paths[0].velocity(t), paths[1].velocity(t)
    m = h.mass
    action = 0.5 * m * (paths[0].action_integral(t) + paths[1].action_integral(t))
    energy = h.energy(n.as_tuple(), include_depth=False)
    phase = np.exp(-1j * (energy * t + action) / HBAR) * np.exp(
        1j * m * (vx * x + vy * y) / HBAR
    )
    amplitude = _oscillator_state(n.n_x, x - cx, h.l_x)
    if dims >= 2:
        amplitude = amplitude * _oscillator_state(n.n_y, y - cy, h.l_y)
    if dims >= 3:
        amplitude = amplitude * _oscillator_state(n.n_z, z, h.l_z)
    return np.asarray(phase * amplitude)


# --- correction basis ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CorrectionBasis:
    """Cardinal polynomials f_j(s) vanishing with four derivatives at s = 0, 1.

    ``coefficients[j]`` holds ascending powers of s for knot j + 1 at
    s = (j + 1)/7.
    """

    coefficients: NDArray[np.float64]
    degree: int
    knots: NDArray[np.float64]
    policy: BasisPolicy
    condition_number: float
    residual: float

    def __call__(self, s: ArrayLike) -> NDArray[np.float64]:
        """Basis values with shape (6, *s.shape)."""
        ss = np.asarray(s, dtype=float)
        return np.stack([Polynomial(c)(ss) for c in self.coefficients])

    def polynomial(self, j: int) -> Polynomial:
        return Polynomial(self.coefficients[j])

    def combine(self, weights: ArrayLike) -> Polynomial:
        """Σ_j weights[j] f_j as one polynomial in s."""
        return Polynomial(np.asarray(weights, dtype=float) @ self.coefficients)

    def table(self) -> list[list[float]]:
        return [[float(c) for c in row] for row in self.coefficients]


def derivative_row(degree: int, point: float, order: int) -> NDArray[np.float64]:
    """Row r such that r @ c is the order-th s-derivative of Σ c_p s^p at ``point``."""
    return np.array(
        [
            math.perm(p, order) * point ** (p - order) if p >= order else 0.0
            for p in range(degree + 1)
        ]
    )


def _condition_rows(
    degree: int, knots: NDArray[np.float64]
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Boundary rows (values and derivatives 1..4 at s=0,1) and knot rows."""
    boundary = np.array(
        [
            derivative_row(degree, point, order)
            for point in (0.0, 1.0)
            for order in range(ENDPOINT_DERIVATIVES + 1)
        ]
    )
    knot_rows = knots[:, None] ** np.arange(degree + 1)[None, :]
    return boundary, knot_rows


def correction_basis(
    policy: BasisPolicy = "exact", degree: int | None = None
) -> CorrectionBasis:
    """Solve the interpolation system for the six knot basis polynomials.

    ``exact`` solves the 16 conditions at degree 15. ``least_squares`` keeps
    the ten endpoint conditions exact and fits the knots at degree 11.

    Raises:
        SingularSystemError: the degree cannot meet the conditions.
    """
    knots = np.arange(1, KNOT_COUNT + 1) / (KNOT_COUNT + 1)
    if degree is None:
        degree = EXACT_DEGREE if policy == "exact" else LEAST_SQUARES_DEGREE
    boundary, knot_rows = _condition_rows(degree, knots)
    targets = np.eye(KNOT_COUNT)

    if policy == "exact":
        system = np.vstack([boundary, knot_rows])
        if system.shape[0] > system.shape[1]:
            raise SingularSystemError(
                f"degree {degree} has {degree + 1} coefficients for "
                f"{system.shape[0]} conditions"
            )
        rhs = np.vstack([np.zeros((boundary.shape[0], KNOT_COUNT)), targets])
        condition = float(np.linalg.cond(system))
        try:
            if system.shape[0] == system.shape[1]:
                coefficients = linalg.solve(system, rhs)
            else:
                coefficients = linalg.lstsq(system, rhs)[0]
        except linalg.LinAlgError as e:
            raise SingularSystemError(
                f"interpolation system is singular (cond={condition:.3g})"
            ) from e
    else:
        null = linalg.null_space(boundary)
        if null.shape[1] == 0:
            raise SingularSystemError(
                f"degree {degree} leaves no freedom after the endpoint conditions"
            )
        reduced = knot_rows @ null
        condition = float(np.linalg.cond(reduced))
        coefficients = null @ linalg.lstsq(reduced, targets)[0]

    residual = float(np.max(np.abs(knot_rows @ coefficients - targets)))
    logger.debug(
        f"Correction basis ({policy}, degree {degree}): cond={condition:.3g}, "
        f"knot residual={residual:.3g}"
    )
    return CorrectionBasis(
        coefficients=np.ascontiguousarray(coefficients.T),
        degree=degree,
        knots=knots,
        policy=policy,
        condition_number=condition,
        residual=residual,
    )


# --- auxiliary functions ------------------------------------------------------


class _ModeIntegrand:
    """Time integrands ⟨Ψ_n|ΔU|Ψ_0⟩ and ⟨Ψ_n|∇_α U_D|Ψ_0⟩ for a mode set."""

    def __init__(
        self,
        modes: Sequence[ModeIndex],
        traj: Trajectory,
        p: LatticeParams,
        h: HarmonicModel,
        *,
        basis: CorrectionBasis | None,
        control_axes: Sequence[Axis],
        dims: int,
    ) -> None:
        self.modes = tuple(modes)
        self.traj = traj
        self.h = h
        self.basis = basis
        self.control_axes = tuple(control_axes)
        self.dims = dims
        self.paths = [classical_path(traj, h, axis) for axis in AXES]
        lattice = lattice_terms(p)
        self.delta = difference_terms(p, h)
        self.gradients = {
            axis: gradient_terms(lattice, AXES.index(axis))
            for axis in self.control_axes
        }
        self.lengths = (h.l_x, h.l_y, h.l_z)
        self.frequencies = np.array(
            [np.dot(h.omegas, m.as_tuple()) for m in self.modes], dtype=float
        )
        self.cutoff = max((m.total for m in self.modes), default=0)

    @property
    def size(self) -> int:
        columns = 1 + (KNOT_COUNT * len(self.control_axes) if self.basis else 0)
        return len(self.modes) * columns

    def _elements(
        self, terms: Sequence[SeparableTerm], offsets: Sequence[float]
    ) -> NDArray[np.complex128]:
        """Σ_terms coef Π_axis ⟨n_axis|f_axis|0⟩ for every mode."""
        cache: dict[tuple[int, Factor, int], complex] = {}

        def element(axis: int, factor: Factor, n: int) -> complex:
            key = (axis, factor, n)
            if key not in cache:
                if axis >= self.dims:
                    # reduced axis: factor at the lattice-relative origin
                    at_origin = complex(evaluate_factor(factor, 0.0))
                    cache[key] = at_origin if n == 0 else 0.0j
                elif axis == 2 and n % 2:
                    cache[key] = 0.0j
                else:
                    length, offset = self.lengths[axis], offsets[axis]
                    cache[key] = complex(
                        mode_matrix_element(n, factor, length, offset)
                    )
            return cache[key]

        values = np.zeros(len(self.modes), dtype=complex)
        for i, mode in enumerate(self.modes):
            total = 0.0j
            for term in terms:
                product = term.coef * element(0, term.fx, mode.n_x)
                if product == 0:
                    continue
                product *= element(1, term.fy, mode.n_y)
                if product == 0:
                    continue
                product *= element(2, term.fz, mode.n_z)
                total += product
            values[i] = total
        return values

    def complex_values(self, t: float) -> NDArray[np.complex128]:
        """G-integrand per mode followed by K-integrand blocks (mode-major)."""
        shift = math.pi / (2 * self.h.k_L)
        qx, qy = self.traj.position(t, "x"), self.traj.position(t, "y")
        offsets = (
            float(self.paths[0].position(t) - shift - qx),
            float(self.paths[1].position(t) - qy),
            0.0,
        )
        phase = np.exp(1j * self.frequencies * t)
        blocks = [phase * self._elements(self.delta, offsets)]
        if self.basis is not None:
            weights = self.basis(t / self.traj.t_f)
            for axis in self.control_axes:
                grad = phase * self._elements(self.gradients[axis], offsets)
                # ∂U_D(r - q_0(α))/∂α_j = -∂_u U_D · f_j(t)
                blocks.append(-(grad[:, None] * weights[None, :]).ravel())
        return np.concatenate(blocks)

    def __call__(self, t: float) -> NDArray[np.float64]:
        values = self.complex_values(t)
        return np.concatenate([values.real, values.imag])


def _printed_z_factor(n: int, k_z: float, l_z: float) -> complex:
    """½ δ_n0 + 2 (2^(3/2) i k_z l_z)^n exp(-2 k_z² l_z²) for even n > 0."""
    if n == 0:
        return 0.5
    if n % 2:
        return 0.0j
    wave = 2 * SQRT2 * 1j * k_z * l_z
    return complex(2 * wave**n * math.exp(-2 * (k_z * l_z) ** 2))


Integral = Callable[[int, IntegralKind, float], complex]


class _PrintedIntegrand(_ModeIntegrand):
    """G and K integrands assembled from the printed per-term rows.

    Each lattice term contributes a row of named Hermite integrals (parallel,
    perpendicular, z and cross); the harmonic and tilt parts enter through
    their Kronecker-δ closed forms. Tilde kinds and the cross-term z factor
    of K use their printed forms.
    """

    def __init__(
        self,
        modes: Sequence[ModeIndex],
        traj: Trajectory,
        p: LatticeParams,
        h: HarmonicModel,
        *,
        basis: CorrectionBasis | None,
        control_axes: Sequence[Axis],
        dims: int,
    ) -> None:
        if dims != 3:
            raise ValueError("the printed form covers the 3D model only")
        if not p.u_d0 > 0:
            raise ValueError("the printed form needs u_d0 > 0")
        if p.xi_z > 0 and (math.isinf(p.w0x) or math.isinf(p.w0y)):
            raise ValueError("the printed form needs finite waists when xi_z > 0")
        super().__init__(
            modes, traj, p, h, basis=basis, control_axes=control_axes, dims=dims
        )
        self.p = p
        self.norms = np.array(
            [
                1.0
                / math.sqrt(
                    2.0**m.total
                    * math.factorial(m.n_x)
                    * math.factorial(m.n_y)
                    * math.factorial(m.n_z)
                    * math.pi
                )
                for m in self.modes
            ]
        )

    def _axis_args(self, axis: int, wave: float, t: float) -> InPlaceArgs:
        p, h = self.p, self.h
        path = float(self.paths[axis].position(t))
        q0 = float(self.traj.position(t, AXES[axis]))
        if axis == 0:
            shifted = path - math.pi / (2 * p.k_L)
            return InPlaceArgs(h.l_x, shifted, q0, wave, p.w0x, h.omega_x, HBAR, path)
        return InPlaceArgs(h.l_y, path, q0, wave, p.w0y, h.omega_y, HBAR, path)

    def _potential_row(
        self, mode: ModeIndex, ix: Integral, iy: Integral, offsets: Sequence[float]
    ) -> complex:
        """Braced G row: lattice terms, harmonic δ terms and the tilt."""
        p, h = self.p, self.h
        k, K = p.k_L, IntegralKind
        nx, ny, nz = mode.as_tuple()
        dx0, dy0, dz0 = float(nx == 0), float(ny == 0), float(nz == 0)
        c = math.cos(p.beta / 2)
        s2, th = math.sin(p.beta / 2) ** 2, p.theta

        parallel = c**2 * (iy(ny, K.D, k) * dx0 - ix(nx, K.D, k) * dy0) * dz0
        mixed = iy(ny, K.D, k / 2) * (
            math.sin(th) * ix(nx, K.D, k / 2) - math.cos(th) * ix(nx, K.DS, k / 2)
        )
        perpendicular = s2 * dz0 * (
            iy(ny, K.D, k) * dx0
            - math.cos(2 * th) * ix(nx, K.D, k) * dy0
            + 4 / SQRT_PI * mixed
            - ix(nx, K.DS, k) * math.sin(2 * th) * dy0
        )
        row = parallel + perpendicular
        if p.xi_z > 0:
            envelope = ix(nx, K.D2, k) * iy(ny, K.D2, k)
            row += p.xi_z / SQRT_PI * envelope * _printed_z_factor(nz, p.k_z, h.l_z)
            if nz and nz % 2 == 0:
                cross = math.cos(p.phi / 2) * ix(nx, K.D2, k) * iy(ny, K.D3, k)
                cross -= math.sin(p.phi / 2) * ix(nx, K.D3S, k) * iy(ny, K.D2, k)
                z_part = cross_z_factor(nz, p.k_z, h.l_z)
                row += 2 * math.sqrt(p.xi_z / math.pi) * c * cross * z_part

        trap = h.omega_x * dy0 * dz0 * ((nx == 1) * offsets[0] + (nx == 2))
        trap += h.omega_y * dx0 * dz0 * ((ny == 1) * offsets[1] + (ny == 2))
        trap += h.omega_z * (0.5 * dz0 + 2 * (nz == 2))
        row += HBAR * SQRT_PI / p.u_d0 * trap
        if (nx, ny, nz) == (1, 0, 0):
            tilt = 2 * h.mass * h.a_x * h.l_x
            tilt += HBAR * h.omega_x * math.pi / (2 * k * h.l_x)
            row += tilt * math.pi / (SQRT2 * p.u_d0)
        return complex(row)

    def _force_row(
        self, mode: ModeIndex, ix: Integral, iy: Integral
    ) -> tuple[complex, complex]:
        """Coefficients of ∇f_x and ∇f_y in the bracketed K row."""
        p, h = self.p, self.h
        k, K = p.k_L, IntegralKind
        nx, ny, nz = mode.as_tuple()
        dx0, dy0, dz0 = float(nx == 0), float(ny == 0), float(nz == 0)
        c = math.cos(p.beta / 2)
        s2, th = math.sin(p.beta / 2) ** 2, p.theta

        along_x = -(c**2) * dz0 * ix(nx, K.DS, k) * dy0
        along_y = c**2 * dz0 * iy(ny, K.DS, k) * dx0
        turned = ix(nx, K.D, k / 2) * math.cos(th) + ix(nx, K.DS, k / 2) * math.sin(th)
        along_x += 2 * dz0 * s2 * dy0 * turned
        along_y += 2 * dz0 * s2 * dx0 * iy(ny, K.DS, k / 2)
        if p.xi_z <= 0:
            return complex(along_x), complex(along_y)

        wx, wy = h.l_x / p.w0x**2, h.l_y / p.w0y**2
        d2x, d2y = ix(nx, K.D2, k), iy(ny, K.D2, k)
        z_part = _printed_z_factor(nz, p.k_z, h.l_z)
        scale = 2 * SQRT2 * p.xi_z / (SQRT_PI * k) * z_part
        along_x += scale * wx * ix(nx, K.D2_TILDE, k) * d2y
        along_y += scale * wy * iy(ny, K.D2_TILDE, k) * d2x

        prefactor = cross_z_factor(
            nz, p.k_z, h.l_z, form="printed", length=h.l_x, waist=p.w0x
        )
        if prefactor:
            cos_phi, sin_phi = math.cos(p.phi / 2), math.sin(p.phi / 2)
            d3x, d3y = ix(nx, K.D3S, k), iy(ny, K.D3, k)
            cross_x = -2 * SQRT2 * wx * (
                -sin_phi * ix(nx, K.D3S_TILDE, k) * d2y
                + cos_phi * d3y * ix(nx, K.D3_TILDE, 0.0)
            ) + sin_phi * k * d3x * d2y
            cross_y = -2 * SQRT2 * wy * (
                cos_phi * iy(ny, K.D3_TILDE, k) * d2x
                - sin_phi * d3x * iy(ny, K.D3_TILDE, 0.0)
            ) + cos_phi * k * d3y * d2x
            scale = 2 / k * math.sqrt(p.xi_z / math.pi) * c * prefactor
            along_x += scale * cross_x
            along_y += scale * cross_y
        return complex(along_x), complex(along_y)

    def complex_values(self, t: float) -> NDArray[np.complex128]:
        cache: dict[tuple[int, int, IntegralKind, float], complex] = {}
        args: dict[tuple[int, float], InPlaceArgs] = {}

        def integral(axis: int, n: int, kind: IntegralKind, wave: float) -> complex:
            key = (axis, n, kind, wave)
            if key not in cache:
                if (axis, wave) not in args:
                    args[axis, wave] = self._axis_args(axis, wave, t)
                cache[key] = hermite_integral(
                    kind, n, args[axis, wave], form="printed"
                )
            return cache[key]

        def ix(n: int, kind: IntegralKind, wave: float) -> complex:
            return integral(0, n, kind, wave)

        def iy(n: int, kind: IntegralKind, wave: float) -> complex:
            return integral(1, n, kind, wave)

        k = self.p.k_L
        offsets = [self._axis_args(axis, k, t).offset for axis in (0, 1)]
        phase = np.exp(1j * self.frequencies * t) * self.norms
        g = np.array([self._potential_row(m, ix, iy, offsets) for m in self.modes])
        blocks = [-self.p.u_d0 * phase * g]
        if self.basis is not None:
            weights = self.basis(t / self.traj.t_f)
            forces = np.array([self._force_row(m, ix, iy) for m in self.modes])
            for axis in self.control_axes:
                column = forces[:, AXES.index(axis)]
                grad = -2 * self.p.u_d0 * k * phase * column
                blocks.append((grad[:, None] * weights[None, :]).ravel())
        return np.concatenate(blocks)


@dataclass(frozen=True)
class QuadratureOptions:
    epsabs: float = 1e-9
    epsrel: float = 1e-9
    max_panels: int = MAX_PANELS


def _integrate(
    integrand: Callable[[float], NDArray[np.float64]],
    t_f: float,
    max_frequency: float,
    options: QuadratureOptions,
) -> NDArray[np.float64]:
    points: list[float] = []
    if max_frequency > 0:
        period = 2 * math.pi / max_frequency
        count = min(int(t_f / period), options.max_panels // 2)
        points = [j * t_f / (count + 1) for j in range(1, count + 1)] if count else []
    result, error, info = integrate.quad_vec(
        integrand,
        0.0,
        t_f,
        epsabs=options.epsabs,
        epsrel=options.epsrel,
        limit=options.max_panels,
        points=points or None,
        full_output=True,
    )
    if not info.success:
        raise QuadratureFailureError(
            f"time quadrature failed: {info.message} (error estimate {error:.3g})"
        )
    panels = info.intervals.shape[0]
    logger.debug(f"Time quadrature: {panels} panels, error {error:.3g}")
    return np.asarray(result)


def auxiliary_functions(
    modes: Sequence[ModeIndex],
    traj: Trajectory,
    p: LatticeParams,
    h: HarmonicModel,
    *,
    basis: CorrectionBasis | None = None,
    control_axes: Sequence[Axis] = AXES,
    dims: int = 3,
    options: QuadratureOptions | None = None,
    form: IntegralForm = "exact",
) -> tuple[NDArray[np.complex128], NDArray[np.complex128]]:
    """G_n for every mode and, with a basis, the 12-component K_n.

    Returns ``(g, k)`` with shapes (modes,) and (modes, 12); K components of
    axes outside ``control_axes`` are exactly zero. ``form="printed"`` sums
    the printed per-term rows instead of the separable matrix elements; it
    covers the 3D model only.
    """
    options = options or QuadratureOptions()
    factory = _PrintedIntegrand if form == "printed" else _ModeIntegrand
    integrand = factory(
        modes, traj, p, h, basis=basis, control_axes=control_axes, dims=dims
    )
    max_frequency = float(np.max(integrand.frequencies, initial=0.0))
    stacked = _integrate(integrand, traj.t_f, max_frequency, options)
    half = stacked.size // 2
    values = stacked[:half] + 1j * stacked[half:]
    count = len(integrand.modes)
    g = values[:count]
    k = np.zeros((count, CONTROL_SIZE), dtype=complex)
    if basis is not None:
        for block, axis in enumerate(integrand.control_axes):
            first = count * (1 + KNOT_COUNT * block)
            chunk = values[first : first + count * KNOT_COUNT]
            start = AXES.index(axis) * KNOT_COUNT
            k[:, start : start + KNOT_COUNT] = chunk.reshape(count, KNOT_COUNT)
    return g, k


def g_n(
    n: ModeIndex,
    traj: Trajectory,
    p: LatticeParams,
    h: HarmonicModel,
    *,
    dims: int = 3,
    options: QuadratureOptions | None = None,
    form: IntegralForm = "exact",
) -> complex:
    """G_n = ∫_0^t_f dt ⟨Ψ_n|U_D - V_D|Ψ_0⟩ for the STA trajectory ``traj``."""
    if n.total == 0:
        raise ValueError("G_n is defined for excited modes only")
    g, _ = auxiliary_functions(
        [n], traj, p, h, dims=dims, options=options, form=form
    )
    return complex(g[0])


def k_n(
    n: ModeIndex,
    traj: Trajectory,
    basis: CorrectionBasis,
    p: LatticeParams,
    h: HarmonicModel,
    *,
    control_axes: Sequence[Axis] = AXES,
    dims: int = 3,
    options: QuadratureOptions | None = None,
    form: IntegralForm = "exact",
) -> NDArray[np.complex128]:
    """K_n = ∫_0^t_f dt ⟨Ψ_n|∇_α U_D(r - q_0(α))|Ψ_0⟩ at α = 0.

    One component per control parameter.
    """
    if n.total == 0:
        raise ValueError("K_n is defined for excited modes only")
    _, k = auxiliary_functions(
        [n],
        traj,
        p,
        h,
        basis=basis,
        control_axes=control_axes,
        dims=dims,
        options=options,
        form=form,
    )
    return k[0]


# --- correction vector --------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EstaCorrection:
    epsilon: NDArray[np.float64]
    modes: tuple[ModeIndex, ...]
    g_values: dict[ModeIndex, complex]
    k_values: dict[ModeIndex, NDArray[np.complex128]]
    cutoff: int
    fidelity_estimate: float
    basis: CorrectionBasis
    diagnostics: tuple[str, ...] = field(default=())

    @property
    def epsilon_x(self) -> NDArray[np.float64]:
        return self.epsilon[:KNOT_COUNT]

    @property
    def epsilon_y(self) -> NDArray[np.float64]:
        return self.epsilon[KNOT_COUNT:]

    def to_record(self, length_unit: float = 1.0) -> dict[str, Any]:
        """Report with lengths divided by ``length_unit``."""
        return {
            "cutoff": self.cutoff,
            "epsilon_x": [float(e / length_unit) for e in self.epsilon_x],
            "epsilon_y": [float(e / length_unit) for e in self.epsilon_y],
            "fidelity_estimate": self.fidelity_estimate,
            "diagnostics": list(self.diagnostics),
            "modes": [
                {
                    "n": list(m.as_tuple()),
                    "abs_g": abs(self.g_values[m]),
                    "norm_k": float(np.linalg.norm(self.k_values[m])),
                }
                for m in self.modes
            ],
            "basis": {
                "policy": self.basis.policy,
                "degree": self.basis.degree,
                "condition_number": self.basis.condition_number,
                "knot_residual": self.basis.residual,
                "coefficients": self.basis.table(),
            },
        }


def optimal_correction(
    g: ArrayLike, k: ArrayLike, *, strict: bool = False
) -> tuple[NDArray[np.float64], tuple[str, ...]]:
    """ε = -(Σ|G_n|²) ΣRe(G_n* K_n) / ‖ΣRe(G_n* K_n)‖².

    ε = 0 when Σ|G_n|² = 0. A vanishing gradient sum with non-zero Σ|G_n|²
    is reported and also gives ε = 0 unless ``strict``.
    """
    gg = np.asarray(g, dtype=complex)
    kk = np.asarray(k, dtype=complex).reshape(gg.size, -1)
    weight = float(np.sum(np.abs(gg) ** 2))
    direction = np.real(np.conj(gg)[:, None] * kk).sum(axis=0)
    norm2 = float(direction @ direction)
    if weight == 0.0:
        diagnostics.info("eSTA: all G_n vanish, STA is already optimal")
        return np.zeros(kk.shape[1]), ("zero-g",)
    if norm2 == 0.0:
        if strict:
            raise DegenerateCorrectionError(
                "ΣRe(G_n* K_n) vanishes while Σ|G_n|² > 0"
            )
        diagnostics.warning("eSTA: degenerate gradient, correction set to zero")
        return np.zeros(kk.shape[1]), ("degenerate-correction",)
    return -weight * direction / norm2, ()


def esta_correction(
    traj_sta: Trajectory,
    p: LatticeParams,
    h: HarmonicModel,
    cutoff: int = 2,
    *,
    basis: CorrectionBasis | None = None,
    control_axes: Sequence[Axis] | None = None,
    dims: int = 3,
    strict: bool = False,
    options: QuadratureOptions | None = None,
) -> EstaCorrection:
    """Compute ε from all modes with 1 ≤ n ≤ cutoff.

    ``control_axes`` defaults to the axes the STA trajectory moves along.
    """
    if cutoff < 1:
        raise ValueError("cutoff must be at least 1")
    basis = basis or correction_basis()
    if control_axes is None:
        control_axes = tuple(a for a in AXES if traj_sta.moves(a)) or AXES
    modes = enumerate_modes(cutoff, dims)
    g, k = auxiliary_functions(
        modes,
        traj_sta,
        p,
        h,
        basis=basis,
        control_axes=control_axes,
        dims=dims,
        options=options,
    )
    epsilon, flags = optimal_correction(g, k, strict=strict)
    estimate = 1.0 - float(np.sum(np.abs(g) ** 2)) / HBAR**2
    if not 0.0 < estimate <= 1.0:
        diagnostics.warning(f"eSTA fidelity estimate {estimate:.4g} outside (0, 1]")
        flags = (*flags, "fidelity-estimate-out-of-range")
    logger.debug(
        f"eSTA correction (N={cutoff}, {len(modes)} modes): "
        f"|eps|={np.linalg.norm(epsilon):.4g}, estimate={estimate:.6f}"
    )
    return EstaCorrection(
        epsilon=epsilon,
        modes=modes,
        g_values={m: complex(v) for m, v in zip(modes, g, strict=True)},
        k_values={m: k[i] for i, m in enumerate(modes)},
        cutoff=cutoff,
        fidelity_estimate=estimate,
        basis=basis,
        diagnostics=flags,
    )


def apply_correction(traj_sta: Trajectory, correction: EstaCorrection) -> Trajectory:
    """STA polynomial plus Σ_j ε_j f_j on each axis."""
    basis = correction.basis
    return replace(
        traj_sta,
        x=traj_sta.x + basis.combine(correction.epsilon_x),
        y=traj_sta.y + basis.combine(correction.epsilon_y),
        provenance=Provenance.ESTA,
        correction=correction,
    )


def design_esta(
    spec: TransportSpec,
    p: LatticeParams,
    h: HarmonicModel | None = None,
    cutoff: int = 2,
    *,
    policy: BasisPolicy = "exact",
    dims: int = 3,
    force_zero: bool = False,
    options: QuadratureOptions | None = None,
) -> Trajectory:
    """eSTA trajectory: the STA design corrected by ε at the six knots.

    ``force_zero`` skips the auxiliary functions and applies ε = 0.
    """
    h = h or harmonic_approximation(p, planar=dims < 3)
    sta = design_sta(spec, h)
    basis = correction_basis(policy)
    if force_zero:
        correction = EstaCorrection(
            epsilon=np.zeros(CONTROL_SIZE),
            modes=(),
            g_values={},
            k_values={},
            cutoff=cutoff,
            fidelity_estimate=math.nan,
            basis=basis,
            diagnostics=("forced-zero",),
        )
    else:
        correction = esta_correction(
            sta,
            p,
            h,
            cutoff,
            basis=basis,
            control_axes=spec.moving_axes(),
            dims=dims,
            options=options,
        )
    return apply_correction(sta, correction)
