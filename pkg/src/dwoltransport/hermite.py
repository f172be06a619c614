"""Closed-form Hermite–Gaussian integrals.

Every integral needed for the eSTA auxiliary functions reduces to

    J = ∫ H_n(X) exp(-X²) (u - o)^p exp(-γ u²) exp(iκ u) dX,   u = σX + δ,

evaluated exactly through the Faà di Bruno expansion of H_n, the binomial
expansion of (u - o)^p and the Gaussian moment formula

    ∫ x^k exp(-a x² + b x) dx
        = exp(b²/4a) Σ_j C(k, 2j) (b/2a)^(k-2j) Γ(j + 1/2) / a^(j + 1/2).

The named kinds (``I_D``, ``I_DS`` ...) are thin specialisations on the
dimensionless mode coordinate. The tilde kinds also have a ``printed`` form,
the closed expressions in absolute path coordinates built on the moment sums
D̃ and D̃²_±, whose distance from the exact integrals ``verify`` reports.
"""

from __future__ import annotations

import cmath
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache, partial
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import IndexTooLargeError

MAX_INDEX = 8
SQRT2 = math.sqrt(2.0)

ComplexArray = NDArray[np.complex128]
IntegralForm = Literal["exact", "printed"]
INTEGRAL_FORMS: tuple[IntegralForm, ...] = ("exact", "printed")


@lru_cache(maxsize=None)
def half_integer_gamma(k: int) -> float:
    """Γ(k + 1/2) from Γ(1/2) = √π by the recurrence Γ(x + 1) = x Γ(x)."""
    if k == 0:
        return math.sqrt(math.pi)
    return (k - 0.5) * half_integer_gamma(k - 1)


@lru_cache(maxsize=None)
def hermite_power_coefficients(n: int) -> tuple[int, ...]:
    """Coefficients c_j with H_n(x) = Σ c_j x^j (physicists' Hermite).

    From H_n(x) = (-1)^n Σ_{k1+2k2=n} n!/(k1! k2!) (-1)^(k1+k2) (2x)^k1.
    """
    coef = [0] * (n + 1)
    for k2 in range(n // 2 + 1):
        k1 = n - 2 * k2
        term = math.factorial(n) // (math.factorial(k1) * math.factorial(k2))
        sign = (-1) ** (n + k1 + k2)
        coef[k1] = sign * term * 2**k1
    return tuple(coef)


def _compensated_sum(terms: Sequence[ComplexArray]) -> ComplexArray:
    """Neumaier summation applied separately to real and imaginary parts."""
    parts = []
    for component in (np.real, np.imag):
        total = np.zeros(np.broadcast_shapes(*(np.shape(t) for t in terms)))
        carry = np.zeros_like(total)
        for term in terms:
            value = component(term)
            updated = total + value
            big = np.abs(total) >= np.abs(value)
            carry += np.where(big, (total - updated) + value, (value - updated) + total)
            total = updated
        parts.append(total + carry)
    return np.asarray(parts[0] + 1j * parts[1])


def _moment_series(order: int, a: float, b: ComplexArray) -> ComplexArray:
    """∫ x^order exp(-a x² + b x) dx without the exp(b²/4a) prefactor."""
    ratio = b / (2 * a)
    terms = [
        math.comb(order, 2 * j)
        * ratio ** (order - 2 * j)
        * (half_integer_gamma(j) / a ** (j + 0.5))
        for j in range(order // 2 + 1)
    ]
    return _compensated_sum(terms)


def gaussian_moment(order: int, a: float, b: ArrayLike) -> ComplexArray:
    """∫ x^order exp(-a x² + b x) dx for a > 0 and complex b."""
    if not a > 0:
        raise ValueError("a must be positive")
    bb = np.asarray(b, dtype=complex)
    return np.asarray(np.exp(bb**2 / (4 * a)) * _moment_series(order, a, bb))


def hermite_gauss_integral(
    n: int,
    *,
    power: int = 0,
    gamma: float = 0.0,
    kappa: float = 0.0,
    shift: ArrayLike = 0.0,
    scale: float = 1.0,
    origin: float = 0.0,
    max_index: int = MAX_INDEX,
) -> ComplexArray:
    """Master integral J(n, p, γ, κ; δ, σ, o) defined in the module docstring.

    ``shift`` may be an array (one value per time sample).

    Raises:
        IndexTooLargeError: ``n`` or ``power`` exceeds ``max_index``.
    """
    if n > max_index or power > max_index:
        raise IndexTooLargeError(
            f"Hermite index {n} / power {power} exceeds cap {max_index}"
        )
    if n < 0 or power < 0:
        raise ValueError("indices must be non-negative")
    delta = np.asarray(shift, dtype=float)
    a = 1.0 + gamma * scale**2
    b = scale * (-2.0 * gamma * delta + 1j * kappa)
    c = delta * (-gamma * delta + 1j * kappa)
    poly_shift = delta - origin

    terms: list[ComplexArray] = []
    for j in range(power + 1):
        weight = math.comb(power, j) * scale**j * poly_shift ** (power - j)
        for k, h in enumerate(hermite_power_coefficients(n)):
            if h:
                terms.append(h * weight * _moment_series(k + j, a, b))
    prefactor = np.exp(c + b**2 / (4 * a))
    return np.asarray(prefactor * _compensated_sum(terms))


def hermite_norm(n: int) -> float:
    """(2^n n! π)^(-1/2), the weight of φ_n φ_0 dx in the mode variable."""
    return 1.0 / math.sqrt(2.0**n * math.factorial(n) * math.pi)


@dataclass(frozen=True)
class Monomial:
    """coef · (u - origin)^power · exp(-γ u²) · exp(iκ u)."""

    coef: complex
    power: int = 0
    gamma: float = 0.0
    kappa: float = 0.0
    origin: float = 0.0

    def __call__(self, u: ArrayLike) -> ComplexArray:
        uu = np.asarray(u, dtype=float)
        return np.asarray(
            self.coef
            * (uu - self.origin) ** self.power
            * np.exp(-self.gamma * uu**2 + 1j * self.kappa * uu)
        )

    def derivative(self) -> tuple[Monomial, ...]:
        """d/du as a sum of monomials."""
        out = [
            Monomial(
                1j * self.kappa * self.coef,
                self.power,
                self.gamma,
                self.kappa,
                self.origin,
            )
        ]
        if self.power:
            out.append(
                Monomial(
                    self.power * self.coef,
                    self.power - 1,
                    self.gamma,
                    self.kappa,
                    self.origin,
                )
            )
        if self.gamma:
            # -2γu (u-o)^p = -2γ[(u-o)^(p+1) + o (u-o)^p]
            out.append(
                Monomial(
                    -2 * self.gamma * self.coef,
                    self.power + 1,
                    self.gamma,
                    self.kappa,
                    self.origin,
                )
            )
            if self.origin:
                out.append(
                    Monomial(
                        -2 * self.gamma * self.origin * self.coef,
                        self.power,
                        self.gamma,
                        self.kappa,
                        self.origin,
                    )
                )
        return tuple(m for m in out if m.coef != 0)


Factor = tuple[Monomial, ...]


def cosine(kappa: float, phase: float = 0.0, gamma: float = 0.0) -> Factor:
    """cos(κu - phase) · exp(-γu²)."""
    half = 0.5 * np.exp(-1j * phase)
    return (
        Monomial(half, gamma=gamma, kappa=kappa),
        Monomial(np.conj(half), gamma=gamma, kappa=-kappa),
    )


def sine(kappa: float, phase: float = 0.0, gamma: float = 0.0) -> Factor:
    """sin(κu - phase) · exp(-γu²)."""
    half = np.exp(-1j * phase) / 2j
    return (
        Monomial(half, gamma=gamma, kappa=kappa),
        Monomial(np.conj(half), gamma=gamma, kappa=-kappa),
    )


def evaluate_factor(factor: Factor, u: ArrayLike) -> ComplexArray:
    total = np.zeros(np.shape(u), dtype=complex)
    for mono in factor:
        total = total + mono(u)
    return total


def factor_derivative(factor: Factor) -> Factor:
    return tuple(d for mono in factor for d in mono.derivative())


def mode_matrix_element(
    n: int,
    factor: Factor,
    length: float,
    offset: ArrayLike,
    max_index: int = MAX_INDEX,
) -> ComplexArray:
    """⟨φ_n| f(u) |φ_0⟩ for 1D oscillator states of zero-point length ``length``.

    The states are centred at u = ``offset``, i.e. u = √2·length·X + offset.
    """
    scale = SQRT2 * length
    terms = [
        mono.coef
        * hermite_gauss_integral(
            n,
            power=mono.power,
            gamma=mono.gamma,
            kappa=mono.kappa,
            shift=offset,
            scale=scale,
            origin=mono.origin,
            max_index=max_index,
        )
        for mono in factor
    ]
    return np.asarray(hermite_norm(n) * _compensated_sum(terms))


class IntegralKind(str, Enum):
    Z = "I_z"
    D = "I_D"
    DS = "I_DS"
    D2 = "I_D2"
    D3 = "I_D3"
    D3S = "I_D3S"
    D4 = "I_D4"
    E = "I_e"
    D2_TILDE = "I_D2_tilde"
    D3_TILDE = "I_D3_tilde"
    D3S_TILDE = "I_D3S_tilde"


@dataclass(frozen=True)
class InPlaceArgs:
    """Arguments of the in-plane kinds.

    ``qc_shifted`` is the displaced classical path q_c - π/(2k_L), ``q0`` the
    lattice position, ``length`` the zero-point length, ``k`` the lattice wave
    number, ``waist`` the Gaussian waist and ``omega`` the trap frequency.
    ``qc``, the undisplaced path, is read only by the printed tilde forms.
    """

    length: float
    qc_shifted: float
    q0: float
    k: float = 1.0
    waist: float = math.inf
    omega: float = 1.0
    hbar: float = 1.0
    qc: float | None = None

    @property
    def offset(self) -> float:
        """X_0 - X_C in mode units."""
        return (self.qc_shifted - self.q0) / (SQRT2 * self.length)

    @property
    def classical(self) -> float:
        """Undisplaced path q_c; ``qc`` when given, else q̃_c + π/(2k)."""
        if self.qc is not None:
            return self.qc
        if self.k == 0:
            raise ValueError("qc is required when k = 0")
        return self.qc_shifted + math.pi / (2 * self.k)


@dataclass(frozen=True)
class OutOfPlaneArgs:
    """Arguments of I_z = ∫ H_n(Z) e^(-Z²) f(Z) dZ.

    f(Z) = A + 2B cos²(√2 k_z l_z Z) + C cos(√2 k_z l_z Z) + D Z².
    """

    k_z: float
    l_z: float
    a: complex = 0.0
    b: complex = 0.0
    c: complex = 0.0
    d: complex = 0.0


def _trig_in_x0(
    n: int, kappa: float, gamma: float, power: int, offset: float, *, sine_part: bool
) -> complex:
    pick = sine if sine_part else cosine
    total = sum(
        mono.coef
        * hermite_gauss_integral(
            n,
            power=power,
            gamma=gamma,
            kappa=mono.kappa,
            shift=offset,
            max_index=max(MAX_INDEX, n, power),
        )
        for mono in pick(kappa)
    )
    return complex(total)


# --- printed closed forms ----------------------------------------------------

PRINTED_KINDS = frozenset(
    {IntegralKind.D2_TILDE, IntegralKind.D3_TILDE, IntegralKind.D3S_TILDE}
)


def _waist_ratio(args: InPlaceArgs) -> float:
    """w²/(4l² + w²); 1 for plane waves."""
    if math.isinf(args.waist):
        return 1.0
    w2 = args.waist**2
    return w2 / (4 * args.length**2 + w2)


def _printed_centre(args: InPlaceArgs, imaginary: complex = 0.0) -> complex:
    """(4l² q_0 + (q̃_c + i·imaginary) w²) / (√2 l (4l² + w²))."""
    r = _waist_ratio(args)
    mixed = (1 - r) * args.q0 + r * (args.qc_shifted + imaginary)
    return complex(mixed / (SQRT2 * args.length))


def printed_d_tilde(k: int, args: InPlaceArgs) -> complex:
    """D̃(k), the moment sum of the printed Ĩ_D2."""
    r = _waist_ratio(args)
    centre = _printed_centre(args)
    return complex(
        sum(
            math.comb(k, 2 * s)
            * centre ** (k - 2 * s)
            * half_integer_gamma(s)
            * r ** (s + 0.5)
            for s in range(k // 2 + 1)
        )
    )


def printed_d2_tilde(k: int, args: InPlaceArgs, sign: int) -> complex:
    """D̃²_±(k), the moment sum of the printed Ĩ_D3 (+1) and Ĩ_D3S (-1).

    Each branch carries i k_L l² w² in the numerator of its centre.
    """
    r = _waist_ratio(args)
    kl2 = args.k * args.length**2
    phase = cmath.exp(1j * args.k * (args.q0 - args.qc_shifted) * r)
    up, down = _printed_centre(args, 1j * kl2), _printed_centre(args, -1j * kl2)
    total = 0.0j
    for s in range(k // 2 + 1):
        weight = math.comb(k, 2 * s) * half_integer_gamma(s) * r ** (s + 0.5)
        total += weight * (
            up ** (k - 2 * s) / phase + sign * phase * down ** (k - 2 * s)
        )
    return total


def _printed_expansion(
    n: int, args: InPlaceArgs, moment: Callable[[int], complex]
) -> complex:
    """Σ_λ C(n, λ) (-√2 q̃_c/l)^(n-λ) Σ_j h_λj [M(j + 1) - q_0/(√2 l) M(j)]."""
    lead = -SQRT2 * args.qc_shifted / args.length
    start = args.q0 / (SQRT2 * args.length)
    total = 0.0j
    for lam in range(n + 1):
        inner = sum(
            h * (moment(j + 1) - start * moment(j))
            for j, h in enumerate(hermite_power_coefficients(lam))
            if h
        )
        total += math.comb(n, lam) * lead ** (n - lam) * inner
    return total


def printed_tilde_integral(kind: IntegralKind, n: int, args: InPlaceArgs) -> complex:
    """Printed closed form of Ĩ_D2, Ĩ_D3 or Ĩ_D3S.

    These stand for ∫ H_n(X_C) X_0 g(X_0) exp(-X_C²) dX with the envelope
    exp(-4 X_0² l²/w²) in all three, times cos or sin(√2 k l X_0) for D3.
    """
    l2 = args.length**2
    if kind is IntegralKind.D2_TILDE:
        w2 = math.inf if math.isinf(args.waist) else args.waist**2
        damping = math.exp(
            -2 * (args.q0 - args.qc_shifted) ** 2 / (2 * SQRT2 * l2 + w2)
        )
        moment = partial(printed_d_tilde, args=args)
        return damping * _printed_expansion(n, args, moment)
    if kind not in PRINTED_KINDS:
        raise ValueError(f"{kind.value} has no printed form")
    r = _waist_ratio(args)
    q_c = args.classical
    damping = math.exp(
        -(args.q0**2 - q_c**2) * (1 - r) / (2 * l2) - args.k**2 * l2 * r / 2
    )
    if kind is IntegralKind.D3_TILDE:
        moment = partial(printed_d2_tilde, args=args, sign=1)
        return 0.5 * damping * _printed_expansion(n, args, moment)
    moment = partial(printed_d2_tilde, args=args, sign=-1)
    return -0.5j * damping * _printed_expansion(n, args, moment)


def cross_z_factor(
    n: int,
    k_z: float,
    l_z: float,
    *,
    form: IntegralForm = "exact",
    length: float = 0.0,
    waist: float = math.inf,
) -> complex:
    """(1/√π) ∫ H_n(Z) exp(-Z²) cos(√2 k_z l_z Z) dZ, the z part of the cross term.

    The printed force row keeps even n > 0 only and carries
    (i√2 l (4l² + w²) k_z l_z)^n, with ``length`` and ``waist`` those of x.
    """
    if form not in INTEGRAL_FORMS:
        raise ValueError(f"unknown form {form!r}")
    kz = SQRT2 * k_z * l_z
    if form == "exact":
        return _trig_in_x0(n, kz, 0.0, 0, 0.0, sine_part=False) / math.sqrt(math.pi)
    if n == 0 or n % 2:
        return 0.0j
    scale = length * (4 * length**2 + waist**2)
    return complex((1j * kz * scale) ** n * math.exp(-((k_z * l_z) ** 2) / 2))


def hermite_integral(
    kind: IntegralKind | str,
    n: int,
    args: InPlaceArgs | OutOfPlaneArgs,
    *,
    form: IntegralForm = "exact",
) -> complex:
    """Evaluate one named Hermite integral kind.

    In-plane kinds integrate H_n(X_C) exp(-X_C²) g(X_0) dX with
    X_C = X - q̃_c/(√2 l) and X_0 = X - q_0/(√2 l). ``form="printed"`` switches
    the tilde kinds to :func:`printed_tilde_integral`; the others have one form.
    """
    kind = IntegralKind(kind)
    if form not in INTEGRAL_FORMS:
        raise ValueError(f"unknown form {form!r}")
    if n > MAX_INDEX:
        raise IndexTooLargeError(f"Hermite index {n} exceeds cap {MAX_INDEX}")
    if kind is IntegralKind.Z:
        if not isinstance(args, OutOfPlaneArgs):
            raise TypeError("I_z takes OutOfPlaneArgs")
        if n % 2:
            return 0.0j
        kz = SQRT2 * args.k_z * args.l_z
        constant = hermite_gauss_integral(n)
        cos_double = _trig_in_x0(n, 2 * kz, 0.0, 0, 0.0, sine_part=False)
        cos_single = _trig_in_x0(n, kz, 0.0, 0, 0.0, sine_part=False)
        quadratic = hermite_gauss_integral(n, power=2)
        return complex(
            args.a * constant
            + args.b * (constant + cos_double)
            + args.c * cos_single
            + args.d * quadratic
        )

    if not isinstance(args, InPlaceArgs):
        raise TypeError(f"{kind.value} takes InPlaceArgs")
    if form == "printed" and kind in PRINTED_KINDS:
        return printed_tilde_integral(kind, n, args)
    off = args.offset
    l2 = args.length**2
    w2 = math.inf if math.isinf(args.waist) else args.waist**2
    gamma_d2 = 4 * l2 / w2
    gamma_d3 = 2 * l2 / w2
    kappa_d = 2 * SQRT2 * args.k * args.length
    kappa_d3 = SQRT2 * args.k * args.length

    if kind is IntegralKind.D:
        return _trig_in_x0(n, kappa_d, 0.0, 0, off, sine_part=False)
    if kind is IntegralKind.DS:
        return _trig_in_x0(n, kappa_d, 0.0, 0, off, sine_part=True)
    if kind is IntegralKind.D2:
        return complex(hermite_gauss_integral(n, gamma=gamma_d2, shift=off))
    if kind is IntegralKind.D3:
        return _trig_in_x0(n, kappa_d3, gamma_d3, 0, off, sine_part=False)
    if kind is IntegralKind.D3S:
        return _trig_in_x0(n, kappa_d3, gamma_d3, 0, off, sine_part=True)
    if kind is IntegralKind.D4:
        half_quantum = 0.5 * args.hbar * args.omega
        return complex(half_quantum * hermite_gauss_integral(n, power=2, shift=off))
    if kind is IntegralKind.E:
        return complex(hermite_gauss_integral(n, power=1, shift=off))
    if kind is IntegralKind.D2_TILDE:
        return complex(hermite_gauss_integral(n, power=1, gamma=gamma_d2, shift=off))
    if kind is IntegralKind.D3_TILDE:
        return _trig_in_x0(n, kappa_d3, gamma_d3, 1, off, sine_part=False)
    return _trig_in_x0(n, kappa_d3, gamma_d3, 1, off, sine_part=True)
