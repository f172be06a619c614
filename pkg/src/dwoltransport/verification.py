"""Oracle suites behind ``dwoltransport verify`` and the acceptance tests.

Each suite returns a list of :class:`Check` values; a suite passes when all
of its checks do. ``full=True`` runs the acceptance-sized variant.
"""

from __future__ import annotations

import functools
import logging
import math
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import hermite as np_hermite
from numpy.polynomial import legendre
from numpy.typing import NDArray
from scipy import integrate, special

from .dynamics import (
    GridSpec,
    PropagationConfig,
    WaveField,
    double_well_trial,
    fidelity,
    harmonic_ground_state,
    ite_ground_state,
    potential_on_grid,
    propagate,
)
from .errors import NonConfiningError
from .esta import (
    BASIS_POLICIES,
    CONTROL_SIZE,
    ENDPOINT_DERIVATIVES,
    KNOT_COUNT,
    ModeIndex,
    QuadratureOptions,
    auxiliary_functions,
    correction_basis,
    derivative_row,
    enumerate_modes,
)
from .hermite import (
    MAX_INDEX,
    INTEGRAL_FORMS,
    PRINTED_KINDS,
    SQRT2,
    InPlaceArgs,
    IntegralKind,
    OutOfPlaneArgs,
    cross_z_factor,
    hermite_gauss_integral,
    hermite_integral,
)
from .lattice import (
    HarmonicModel,
    LatticeParams,
    evaluate_potential,
    harmonic_approximation,
    reference_lattice,
)
from .sta import (
    AXES,
    MINIMAL_POLYNOMIAL,
    Trajectory,
    TransportDirection,
    TransportSpec,
    classical_path,
    design_sta,
)

logger = logging.getLogger(__name__)

SUITE_NAMES = ("trajectory", "hermite", "gk", "order", "harmonic", "ite")


@dataclass(frozen=True)
class Check:
    """One measured value; ``limit`` is None for values recorded without a bound."""

    name: str
    passed: bool
    value: float
    limit: float | None


@dataclass(frozen=True)
class SuiteResult:
    suite: str
    checks: list[Check] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_record(self) -> dict[str, object]:
        return {
            "suite": self.suite,
            "passed": self.passed,
            "seconds": round(self.seconds, 3),
            "checks": [
                {"name": c.name, "passed": c.passed, "value": c.value, "limit": c.limit}
                for c in self.checks
            ],
        }


def _at_most(name: str, value: float, limit: float) -> Check:
    return Check(name, bool(value <= limit), float(value), limit)


def _at_least(name: str, value: float, limit: float) -> Check:
    return Check(name, bool(value >= limit), float(value), limit)


def _recorded(name: str, value: float) -> Check:
    return Check(name, True, float(value), None)


def oscillator_model(omega: float, *, mass: float = 1.0) -> HarmonicModel:
    """Isotropic harmonic trap without linear term or depth."""
    length = math.sqrt(1.0 / (2 * mass * omega))
    period = 2 * math.pi / omega
    return HarmonicModel(
        v_d0=0.0,
        omega_x=omega,
        omega_y=omega,
        omega_z=omega,
        a_x=0.0,
        l_x=length,
        l_y=length,
        l_z=length,
        t_x=period,
        t_y=period,
        e_r=0.5,
        mass=mass,
    )


# --- trajectory contracts -----------------------------------------------------


def _endpoint_error(
    coef: NDArray[np.float64], order: int, s: float, target: float
) -> float:
    """|d^k/ds^k Σ c_n s^n - target| at s, relative to the summed magnitude."""
    row = derivative_row(coef.size - 1, s, order)
    scale = max(float(np.sum(np.abs(row * coef))), abs(target), 1.0)
    return abs(float(row @ coef) - target) / scale


def verify_trajectory(rng: np.random.Generator, *, full: bool = False) -> list[Check]:
    """Endpoint conditions, auxiliary equation and eSTA basis endpoints."""
    draws = 1000
    worst_endpoint = worst_path = worst_residual = 0.0
    for _ in range(draws):
        omega = float(np.exp(rng.uniform(math.log(0.1), math.log(10.0))))
        t_f = float(rng.uniform(math.pi, 40 * math.pi)) / omega
        d = float(np.exp(rng.uniform(math.log(1e-2), math.log(1e3))))
        h = oscillator_model(omega)
        traj = design_sta(TransportSpec(TransportDirection.X, d, t_f), h)
        coef = traj.coefficients("x")
        path = classical_path(traj, h, "x")
        for s in (0.0, 1.0):
            for order in range(ENDPOINT_DERIVATIVES + 1):
                target = d * s if order == 0 else 0.0
                if order < 3:
                    error = _endpoint_error(coef, order, s, target)
                    worst_endpoint = max(worst_endpoint, error)
                error = _endpoint_error(path.poly.coef, order, s, target)
                worst_path = max(worst_path, error)
        t = np.linspace(0.0, t_f, 65)
        lag = path.position(t) - traj.position(t, "x")
        residual = path.acceleration(t) + omega**2 * lag
        scale = omega**2 * float(np.sum(np.abs(coef)))
        worst_residual = max(worst_residual, float(np.max(np.abs(residual))) / scale)

    checks = [
        _at_most("sta endpoint conditions (scaled)", worst_endpoint, 1e-12),
        _at_most("classical path endpoint conditions (scaled)", worst_path, 1e-12),
        _at_most("auxiliary equation residual (scaled)", worst_residual, 1e-10),
    ]
    for policy in BASIS_POLICIES:
        basis = correction_basis(policy)
        worst = max(
            _endpoint_error(c, order, s, 0.0)
            for c in basis.coefficients
            for s in (0.0, 1.0)
            for order in range(ENDPOINT_DERIVATIVES + 1)
        )
        name = f"{policy} basis endpoint conditions (scaled)"
        checks.append(_at_most(name, worst, 1e-12))
    exact = correction_basis("exact")
    checks.append(_at_most("exact basis knot residual", exact.residual, 1e-9))
    return checks


# --- Hermite primitives ---------------------------------------------------------


def _quad_complex(f: Callable[[float], complex]) -> tuple[complex, float]:
    """∫ f over the real line and ∫ |f| as the comparison scale."""
    opts = {"epsabs": 0.0, "epsrel": 1e-13, "limit": 400}
    re = integrate.quad(lambda x: f(x).real, -np.inf, np.inf, **opts)[0]
    im = integrate.quad(lambda x: f(x).imag, -np.inf, np.inf, **opts)[0]
    scale = integrate.quad(lambda x: abs(f(x)), -np.inf, np.inf, **opts)[0]
    return complex(re, im), scale


def _kind_integrand(
    kind: IntegralKind, args: InPlaceArgs
) -> Callable[[float], complex]:
    l2 = args.length**2
    w2 = math.inf if math.isinf(args.waist) else args.waist**2
    g2, g3 = 4 * l2 / w2, 2 * l2 / w2
    k3 = math.sqrt(2) * args.k * args.length
    kd = 2 * k3
    off = args.offset

    def shape(x0: float) -> float:
        table = {
            IntegralKind.D: math.cos(kd * x0),
            IntegralKind.DS: math.sin(kd * x0),
            IntegralKind.D2: math.exp(-g2 * x0**2),
            IntegralKind.D3: math.exp(-g3 * x0**2) * math.cos(k3 * x0),
            IntegralKind.D3S: math.exp(-g3 * x0**2) * math.sin(k3 * x0),
            IntegralKind.D4: 0.5 * args.hbar * args.omega * x0**2,
            IntegralKind.E: x0,
            IntegralKind.D2_TILDE: x0 * math.exp(-g2 * x0**2),
            IntegralKind.D3_TILDE: x0 * math.exp(-g3 * x0**2) * math.cos(k3 * x0),
            IntegralKind.D3S_TILDE: x0 * math.exp(-g3 * x0**2) * math.sin(k3 * x0),
        }
        return table[kind]

    return lambda x: complex(shape(x + off))


def _hermite_weight(n: int, x: float) -> float:
    return float(special.eval_hermite(n, x)) * math.exp(-(x**2))


def _hermite_norm(n: int) -> float:
    return math.sqrt(2.0**n * math.factorial(n) * math.pi)


def _master_integrand(
    n: int,
    power: int,
    gamma: float,
    kappa: float,
    shift: float,
    scale: float,
    origin: float,
    x: float,
) -> complex:
    u = scale * x + shift
    envelope = (u - origin) ** power * math.exp(-gamma * u**2)
    wave = complex(math.cos(kappa * u), math.sin(kappa * u))
    return _hermite_weight(n, x) * envelope * wave


def verify_hermite(rng: np.random.Generator, *, full: bool = False) -> list[Check]:
    """Closed-form Hermite integrals against adaptive 1D quadrature."""
    draws = 40 if full else 12
    worst_master = 0.0
    for _ in range(draws):
        n = int(rng.integers(0, 5))
        power = int(rng.integers(0, 3))
        gamma = float(rng.uniform(0.0, 0.5))
        kappa = float(rng.uniform(0.0, 3.0))
        shift = float(rng.uniform(-2.0, 2.0))
        scale = float(rng.uniform(0.3, 1.5))
        origin = float(rng.uniform(-1.0, 1.0))
        closed = complex(
            hermite_gauss_integral(
                n,
                power=power,
                gamma=gamma,
                kappa=kappa,
                shift=shift,
                scale=scale,
                origin=origin,
            )
        )

        reference, magnitude = _quad_complex(
            functools.partial(
                _master_integrand, n, power, gamma, kappa, shift, scale, origin
            )
        )
        worst_master = max(worst_master, abs(closed - reference) / magnitude)
    checks = [_at_most("master integral vs quadrature", worst_master, 1e-8)]

    worst_kind: dict[str, float] = {}
    for _ in range(max(2, draws // 4)):
        args = InPlaceArgs(
            length=float(rng.uniform(0.05, 0.4)),
            qc_shifted=float(rng.uniform(-0.3, 0.3)),
            q0=float(rng.uniform(-0.3, 0.3)),
            k=1.0,
            waist=float(rng.uniform(0.5, 5.0)),
            omega=float(rng.uniform(1.0, 50.0)),
        )
        for kind in IntegralKind:
            if kind is IntegralKind.Z:
                continue
            n = int(rng.integers(0, 4))
            shape = _kind_integrand(kind, args)
            reference, magnitude = _quad_complex(
                lambda x, n=n, shape=shape: _hermite_weight(n, x) * shape(x)
            )
            closed = hermite_integral(kind, n, args)
            error = abs(closed - reference) / magnitude
            worst_kind[kind.value] = max(worst_kind.get(kind.value, 0.0), error)

        z_args = OutOfPlaneArgs(
            k_z=1.0,
            l_z=float(rng.uniform(0.1, 1.0)),
            a=float(rng.normal()),
            b=float(rng.normal()),
            c=float(rng.normal()),
            d=float(rng.normal()),
        )
        kz = math.sqrt(2) * z_args.k_z * z_args.l_z
        for n in (0, 1, 2, 4):
            reference, magnitude = _quad_complex(
                lambda x, n=n: _hermite_weight(n, x)
                * (
                    z_args.a
                    + 2 * z_args.b * math.cos(kz * x) ** 2
                    + z_args.c * math.cos(kz * x)
                    + z_args.d * x**2
                )
            )
            closed = hermite_integral(IntegralKind.Z, n, z_args)
            error = abs(closed - reference) / magnitude
            worst_kind["I_z"] = max(worst_kind.get("I_z", 0.0), error)
    checks.extend(
        _at_most(f"{kind} vs quadrature", value, 1e-8)
        for kind, value in sorted(worst_kind.items())
    )
    checks.append(Check("index cap", MAX_INDEX >= 2 * 2, float(MAX_INDEX), 4.0))
    return checks


# --- G_n / K_n against space-time quadrature -------------------------------------


def brute_force_auxiliary(
    modes: Sequence[ModeIndex],
    traj: Trajectory,
    p: LatticeParams,
    h: HarmonicModel,
    *,
    space_nodes: tuple[int, int, int] = (40, 40, 40),
    time_order: int = 12,
) -> tuple[NDArray[np.complex128], NDArray[np.complex128]]:
    """G_n and K_n from Gauss-Hermite space nodes and Gauss-Legendre time panels.

    The integrand uses U_D with frozen waists directly; gradients are central
    differences along u and v.
    """
    basis = correction_basis()
    paths = [classical_path(traj, h, axis) for axis in AXES]
    shift = math.pi / (2 * h.k_L)
    lengths = (h.l_x, h.l_y, h.l_z)
    rules = [np_hermite.hermgauss(n) for n in space_nodes]
    cutoff = max(m.total for m in modes)
    weighted = [
        [
            w * special.eval_hermite(n, x) / _hermite_norm(n)
            for n in range(cutoff + 1)
        ]
        for x, w in rules
    ]
    frequencies = np.array([np.dot(h.omegas, m.as_tuple()) for m in modes])
    t_f = traj.t_f
    panels = max(4, math.ceil(t_f * float(frequencies.max()) / math.pi))
    t_nodes, t_weights = legendre.leggauss(time_order)
    edges = np.linspace(0.0, t_f, panels + 1)

    g = np.zeros(len(modes), dtype=complex)
    k = np.zeros((len(modes), CONTROL_SIZE), dtype=complex)
    z = math.sqrt(2) * lengths[2] * rules[2][0]
    for a, b in zip(edges[:-1], edges[1:], strict=True):
        for node, weight in zip(t_nodes, t_weights, strict=True):
            t = 0.5 * (b - a) * node + 0.5 * (a + b)
            dt_weight = 0.5 * (b - a) * weight
            cx = float(paths[0].position(t) - shift - traj.position(t, "x"))
            cy = float(paths[1].position(t) - traj.position(t, "y"))
            u = math.sqrt(2) * lengths[0] * rules[0][0] + cx
            v = math.sqrt(2) * lengths[1] * rules[1][0] + cy
            uu, vv, zz = u[:, None, None], v[None, :, None], z[None, None, :]

            def lattice(du: float = 0.0, dv: float = 0.0) -> NDArray[np.float64]:
                return np.asarray(
                    evaluate_potential((uu + du, vv + dv, zz), p, frozen_waists=True)
                )

            delta = lattice() - h.potential(uu, vv, zz)
            step_u, step_v = 1e-4 * lengths[0], 1e-4 * lengths[1]
            grad_u = (lattice(du=step_u) - lattice(du=-step_u)) / (2 * step_u)
            grad_v = (lattice(dv=step_v) - lattice(dv=-step_v)) / (2 * step_v)
            f = basis(t / t_f)
            for i, mode in enumerate(modes):
                wx, wy, wz = (
                    weighted[axis][n] for axis, n in enumerate(mode.as_tuple())
                )
                phase = np.exp(1j * frequencies[i] * t) * dt_weight
                g[i] += phase * np.einsum("i,j,k,ijk->", wx, wy, wz, delta)
                gu = np.einsum("i,j,k,ijk->", wx, wy, wz, grad_u)
                gv = np.einsum("i,j,k,ijk->", wx, wy, wz, grad_v)
                k[i, :KNOT_COUNT] += -phase * gu * f
                k[i, KNOT_COUNT:] += -phase * gv * f
    return g, k


def random_lattice(rng: np.random.Generator) -> tuple[LatticeParams, HarmonicModel]:
    """Confining lattice drawn from the acceptance parameter ranges."""
    while True:
        try:
            p = reference_lattice(
                float(rng.uniform(50.0, 1500.0)),
                beta=float(rng.uniform(0.0, math.pi / 2)),
                theta=float(rng.uniform(-math.pi, math.pi)),
                phi=float(rng.uniform(-math.pi, math.pi)),
                xi_z=float(rng.uniform(0.01, 0.1)),
            )
            return p, harmonic_approximation(p)
        except NonConfiningError:
            continue


def _printed_definition(
    kind: IntegralKind, args: InPlaceArgs
) -> Callable[[float], complex]:
    """X_0 exp(-4 X_0² l²/w²) [cos | sin](√2 k l X_0), the printed tilde integrands."""
    gamma = 4 * args.length**2 / args.waist**2
    kappa = SQRT2 * args.k * args.length
    off = args.offset

    def shape(x: float) -> complex:
        x0 = x + off
        value = x0 * math.exp(-gamma * x0**2)
        if kind is IntegralKind.D3_TILDE:
            value *= math.cos(kappa * x0)
        elif kind is IntegralKind.D3S_TILDE:
            value *= math.sin(kappa * x0)
        return complex(value)

    return shape


def printed_kind_gaps(rng: np.random.Generator, draws: int) -> dict[str, float]:
    """Worst relative distance of each printed tilde kind from quadrature."""
    worst: dict[str, float] = {}
    for _ in range(draws):
        args = InPlaceArgs(
            length=float(rng.uniform(0.05, 0.4)),
            qc_shifted=float(rng.uniform(-0.3, 0.3)),
            q0=float(rng.uniform(-0.3, 0.3)),
            k=1.0,
            waist=float(rng.uniform(0.5, 5.0)),
        )
        for kind in sorted(PRINTED_KINDS, key=lambda kind: kind.value):
            n = int(rng.integers(0, 4))
            shape = _printed_definition(kind, args)
            reference, magnitude = _quad_complex(
                lambda x, n=n, shape=shape: _hermite_weight(n, x) * shape(x)
            )
            printed = hermite_integral(kind, n, args, form="printed")
            gap = abs(printed - reference) / magnitude
            worst[kind.value] = max(worst.get(kind.value, 0.0), gap)
    return worst


def cross_z_gaps(
    k_z: float, l_z: float, length: float, waist: float
) -> tuple[float, float]:
    """Relative error of the exact and printed cross-term z factors at n_z = 2."""
    kz = SQRT2 * k_z * l_z
    reference, _ = _quad_complex(lambda x: _hermite_weight(2, x) * math.cos(kz * x))
    reference /= math.sqrt(math.pi)
    exact = cross_z_factor(2, k_z, l_z)
    printed = cross_z_factor(2, k_z, l_z, form="printed", length=length, waist=waist)
    return (
        abs(exact - reference) / abs(reference),
        abs(printed - reference) / abs(reference),
    )


def verify_gk(rng: np.random.Generator, *, full: bool = False) -> list[Check]:
    """Closed-form G_n and K_n against brute-force space-time quadrature.

    The printed forms are evaluated alongside; their distance from the same
    references is recorded without a bound.
    """
    draws = 20 if full else 2
    modes = enumerate_modes(2, 3)
    options = QuadratureOptions(epsabs=1e-14, epsrel=1e-11)
    worst = dict.fromkeys(("g", "k", "g_printed", "k_printed", "z", "z_printed"), 0.0)
    directions = [d.value for d in TransportDirection]

    def gap(value: NDArray[np.complex128], reference: NDArray[np.complex128]) -> float:
        return float(np.max(np.abs(value - reference)) / np.max(np.abs(reference)))

    for _ in range(draws):
        p, h = random_lattice(rng)
        direction = TransportDirection(rng.choice(directions))
        distance = float(rng.uniform(2.0, 20.0)) * h.l_x
        spec = TransportSpec(direction, distance, 3 * h.t_x)
        traj = design_sta(spec, h)
        g_ref, k_ref = brute_force_auxiliary(modes, traj, p, h)
        for form in INTEGRAL_FORMS:
            g, k = auxiliary_functions(
                modes,
                traj,
                p,
                h,
                basis=correction_basis(),
                control_axes=AXES,
                options=options,
                form=form,
            )
            suffix = "_printed" if form == "printed" else ""
            worst["g" + suffix] = max(worst["g" + suffix], gap(g, g_ref))
            worst["k" + suffix] = max(worst["k" + suffix], gap(k, k_ref))
        z_exact, z_printed = cross_z_gaps(p.k_z, h.l_z, h.l_x, p.w0x)
        worst["z"] = max(worst["z"], z_exact)
        worst["z_printed"] = max(worst["z_printed"], z_printed)

    checks = [
        _at_most("G_n vs space-time quadrature", worst["g"], 1e-5),
        _at_most("K_n vs space-time quadrature", worst["k"], 1e-5),
        _at_most("cross-term z factor vs quadrature", worst["z"], 1e-8),
        _recorded("printed G_n vs space-time quadrature", worst["g_printed"]),
        _recorded("printed K_n vs space-time quadrature", worst["k_printed"]),
        _recorded("printed cross-term z prefactor vs quadrature", worst["z_printed"]),
    ]
    labels = {
        IntegralKind.D2_TILDE.value: "printed I_D2_tilde (D̃) vs quadrature",
        IntegralKind.D3_TILDE.value: "printed I_D3_tilde (D̃²_+) vs quadrature",
        IntegralKind.D3S_TILDE.value: "printed I_D3S_tilde (D̃²_-) vs quadrature",
    }
    kind_gaps = printed_kind_gaps(rng, 12 if full else 4)
    checks.extend(_recorded(labels[kind], value) for kind, value in kind_gaps.items())
    return checks


# --- dynamics oracles ----------------------------------------------------------


def _fixed_step_run(
    phi0: WaveField, traj: Trajectory, potential: NDArray[np.float64], steps: int
) -> WaveField:
    cfg = PropagationConfig(
        dt_initial=traj.t_f / steps,
        min_steps=1,
        max_steps=max(steps, 1),
        adaptive=False,
        boundary_policy="warn",
    )
    return propagate(phi0, traj, potential, cfg).final


def verify_order(rng: np.random.Generator, *, full: bool = False) -> list[Check]:
    """Observed global order of the FSOM scheme on a 2D harmonic transport."""
    p = reference_lattice(300.0)
    h = harmonic_approximation(p, planar=True)
    size = 128 if full else 64
    grid = GridSpec.centered(
        (size, size), (24 * h.l_x, 24 * h.l_y), (h.equilibrium_x, 0.0)
    )
    potential = potential_on_grid(grid, p, model="harmonic", h=h)
    spec = TransportSpec(TransportDirection.DIAGONAL, 20 * h.l_x, 2 * h.t_x)
    traj = design_sta(spec, h)
    phi0 = harmonic_ground_state(grid, h)
    reference = _fixed_step_run(phi0, traj, potential, 8192)
    counts = (64, 128, 256, 512)
    errors = []
    for steps in counts:
        state = _fixed_step_run(phi0, traj, potential, steps)
        diff = state.amplitudes - reference.amplitudes
        errors.append(math.sqrt(float(np.sum(np.abs(diff) ** 2)) * grid.cell_volume))
    orders = [math.log2(e0 / e1) for e0, e1 in zip(errors, errors[1:], strict=False)]
    logger.debug(f"Dyadic errors {errors}, observed orders {orders}")
    pairs = zip(counts, counts[1:], strict=False)
    return [
        Check(f"order {n0}->{n1} steps", 1.8 <= o <= 2.2, o, 2.0)
        for (n0, n1), o in zip(pairs, orders, strict=True)
    ]


def verify_harmonic(rng: np.random.Generator, *, full: bool = False) -> list[Check]:
    """STA in the harmonic model: fidelity ≥ 1 - 1e-4 for 1D x transport."""
    p = reference_lattice(1500.0)
    h = harmonic_approximation(p, planar=True)
    grid = GridSpec.centered((512,), (64 * h.l_x,), (h.equilibrium_x,))
    potential = potential_on_grid(grid, p, model="harmonic", h=h)
    ground, _ = ite_ground_state(potential, grid, trial=harmonic_ground_state(grid, h))
    checks = []
    for periods in (2.0, 4.0, 8.0):
        spec = TransportSpec(TransportDirection.X, 158 * h.l_x, periods * h.t_x)
        result = propagate(ground, design_sta(spec, h), potential, PropagationConfig())
        label = f"t_f={periods:g} T_x"
        value = fidelity(ground, result.final)
        checks.append(_at_least(f"fidelity at {label}", value, 1 - 1e-4))
        checks.append(_at_most(f"norm drift at {label}", result.norm_drift, 1e-10))
    return checks


def count_density_maxima(density: NDArray[np.float64], *, floor: float = 0.01) -> int:
    """Periodic local maxima along axis 0 of the row through the peak."""
    row_index = np.unravel_index(int(np.argmax(density)), density.shape)
    line = density[(slice(None), *row_index[1:])]
    left, right = np.roll(line, 1), np.roll(line, -1)
    peaks = (line > left) & (line >= right) & (line > floor * line.max())
    return int(np.count_nonzero(peaks))


def verify_ite(rng: np.random.Generator, *, full: bool = False) -> list[Check]:
    """ITE energies and the bimodal double-well ground state."""
    p = reference_lattice(1500.0, xi_z=0.05)
    h = harmonic_approximation(p)
    size = 128 if full else 32
    grid = GridSpec.centered(
        (size, size, size),
        (16 * h.l_x, 16 * h.l_y, 16 * h.l_z),
        (h.equilibrium_x, 0.0, 0.0),
    )
    # V_D without its constant depth
    potential = potential_on_grid(grid, p, model="harmonic", h=h) + h.v_d0
    history: list[float] = []
    _, energy = ite_ground_state(potential, grid, history=history)
    expected = h.energy((0, 0, 0), include_depth=False)
    rises = np.diff(np.asarray(history))
    checks = [
        _at_most(
            "harmonic + linear ground energy (relative)",
            abs(energy - expected) / abs(expected),
            1e-6,
        ),
        _at_most(
            "energy increase between iterations",
            float(rises.max(initial=0.0)),
            1e-10 * abs(expected),
        ),
    ]

    double = reference_lattice(300.0)
    dh = harmonic_approximation(double, planar=True)
    cells = GridSpec.centered(
        (128, 128), (double.period, double.period), (0.0, 0.0)
    )
    well, _ = ite_ground_state(
        potential_on_grid(cells, double),
        cells,
        trial=double_well_trial(cells, double, dh),
        tol_energy=1e-8,
    )
    maxima = count_density_maxima(well.density())
    checks.append(
        Check("density maxima along x in one cell", maxima >= 2, float(maxima), 2.0)
    )
    return checks


SUITES: dict[str, Callable[..., list[Check]]] = {
    "trajectory": verify_trajectory,
    "hermite": verify_hermite,
    "gk": verify_gk,
    "order": verify_order,
    "harmonic": verify_harmonic,
    "ite": verify_ite,
}


def run_suites(
    names: Sequence[str],
    *,
    seed: int = 0,
    full: bool = False,
    on_suite: Callable[[SuiteResult], None] | None = None,
) -> list[SuiteResult]:
    """Run suites in order; each gets its own generator seeded from ``seed``."""
    results = []
    for offset, name in enumerate(names):
        rng = np.random.default_rng([seed, offset])
        started = time.perf_counter()
        checks = SUITES[name](rng, full=full)
        result = SuiteResult(name, checks, time.perf_counter() - started)
        status = "pass" if result.passed else "FAIL"
        logger.debug(f"Suite {name}: {status} in {result.seconds:.1f} s")
        results.append(result)
        if on_suite is not None:
            on_suite(result)
    return results
