"""Run configuration: TOML documents resolved into internal-unit objects.

Every physical quantity is a ``"<number> <unit>"`` string. Lengths and times
tagged with harmonic scales (``l_x``, ``T_x`` ...) are resolved with the
lattice's infinite-waist harmonic model, which does not depend on the waists
those tags may define.
"""

from __future__ import annotations

import copy
import logging
import math
import sys
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, cast

import tomli_w

from .dynamics import GridSpec, PotentialModel, PropagationConfig
from .errors import ConfigError, NumericalError
from .esta import BASIS_POLICIES, BasisPolicy
from .lattice import HarmonicModel, LatticeParams, harmonic_approximation
from .sta import TransportDirection, TransportSpec
from .units import (
    Dimension,
    Quantity,
    Scales,
    angle_to_rad,
    parse_quantity,
    si_base,
)

# tomllib is only available in Python 3.11+
if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

METHODS = ("sta", "esta")
POTENTIAL_MODELS = ("full", "harmonic")
TRIAL_STATES = ("harmonic", "symmetric")
HARMONIC_FORMS = ("exact", "printed")

# Sweeps may vary any of these dotted fields.
SWEEP_VARIABLES = (
    "transport.t_f",
    "transport.distance",
    "lattice.u_d0",
    "lattice.beta",
    "lattice.theta",
    "lattice.phi",
    "lattice.xi_z",
    "method.cutoff",
)
# Sweeping these leaves the ground state unchanged.
TRANSPORT_VARIABLES = ("transport.t_f", "transport.distance")

DEFAULTS: dict[str, dict[str, Any]] = {
    "lattice": {
        "theta": "0.5 pi",
        "phi": "0.5 pi",
        "xi_z": 0.0,
        "k_L": "1 k_L",
        "k_z": "1 k_L",
        "mass": "1 m_atom",
        "harmonic_form": "exact",
    },
    "transport": {"direction": "x", "l_r": "1 l_x"},
    "method": {
        "name": "sta",
        "cutoff": 2,
        "basis": "exact",
        "force_zero_correction": False,
    },
    "potential": {"model": "full"},
    "propagation": {
        "max_rel_error": 1e-4,
        "min_steps": 20,
        "max_steps": 100,
        "max_substeps": 30,
        "adaptive": True,
        "boundary_tolerance": 1e-6,
        "boundary_policy": "abort",
    },
    "ground_state": {"tol_energy": 1e-10, "max_iter": 200000, "trial": "harmonic"},
    "output": {
        "directory": "results",
        "snapshot_fractions": [],
        "trajectory_samples": 201,
    },
    "run": {"seed": 0, "threads": 1},
}

KNOWN_KEYS: dict[str, set[str]] = {
    "lattice": {
        "u_d0", "beta", "theta", "phi", "xi_z", "k_L", "k_z", "w0x", "w0y",
        "z_Rx", "z_Ry", "mass", "harmonic_form",
    },
    "transport": {"direction", "distance", "t_f", "l_r"},
    "method": {"name", "cutoff", "basis", "force_zero_correction"},
    "grid": {"shape", "extents", "center"},
    "potential": {"model"},
    "propagation": {
        "dt_initial", "max_rel_error", "min_steps", "max_steps", "max_substeps",
        "adaptive", "boundary_tolerance", "boundary_policy",
    },
    "ground_state": {"tol_energy", "dtau", "max_iter", "trial"},
    "sweep": {"variable", "values"},
    "output": {"directory", "snapshot_fractions", "trajectory_samples"},
    "run": {"seed", "threads"},
}

# Window of the computational grid when [grid] is absent, in harmonic lengths.
DEFAULT_GRID = {
    "shape": [200, 300, 100],
    "extents": ["100 l_x", "100 l_y", "500 l_z"],
}


@dataclass(frozen=True)
class GroundStateConfig:
    tol_energy: float = 1e-10
    dtau: float | None = None
    max_iter: int = 200_000
    trial: str = "harmonic"


@dataclass(frozen=True)
class SweepAxis:
    variable: str
    values: tuple[Any, ...]


@dataclass(frozen=True, eq=False)
class RunConfig:
    """A validated run with every quantity in internal units.

    ``document`` is the resolved TOML document (defaults filled in); it
    round-trips through :func:`load_config`.
    """

    document: dict[str, Any]
    lattice: LatticeParams
    harmonic: HarmonicModel
    scales: Scales
    transport: TransportSpec
    l_r: float
    methods: tuple[str, ...]
    cutoff: int
    basis: BasisPolicy
    force_zero_correction: bool
    grid: GridSpec
    potential_model: PotentialModel
    propagation: PropagationConfig
    ground_state: GroundStateConfig
    sweep: SweepAxis | None
    output_directory: Path
    snapshot_fractions: tuple[float, ...]
    trajectory_samples: int
    seed: int
    threads: int
    source: Path | None = None

    @property
    def dims(self) -> int:
        return self.grid.ndim

    def to_toml(self) -> str:
        return tomli_w.dumps(self.document)

    def with_value(self, variable: str, value: Any) -> RunConfig:
        """This run with one dotted field replaced (and [sweep] dropped)."""
        document = copy.deepcopy(self.document)
        document.pop("sweep", None)
        table, key = variable.split(".", 1)
        document.setdefault(table, {})[key] = value
        return load_config(document, source=self.source)

    def with_overrides(
        self,
        *,
        threads: int | None = None,
        directory: str | Path | None = None,
        seed: int | None = None,
        snapshot_fractions: Sequence[float] | None = None,
    ) -> RunConfig:
        """Apply harness-level settings that do not change the physics."""
        document = copy.deepcopy(self.document)
        changes: dict[str, Any] = {}
        if seed is not None:
            document["run"]["seed"] = seed
            changes["seed"] = seed
        if snapshot_fractions is not None:
            fractions = tuple(float(f) for f in snapshot_fractions)
            if any(not 0.0 <= f <= 1.0 for f in fractions):
                raise ConfigError(
                    "snapshot fractions must lie in [0, 1]", "output.snapshot_fractions"
                )
            document["output"]["snapshot_fractions"] = list(fractions)
            changes["snapshot_fractions"] = fractions
        if threads is not None:
            if threads < 1:
                raise ConfigError("threads must be at least 1", "run.threads")
            document["run"]["threads"] = threads
            changes["threads"] = threads
            changes["propagation"] = replace(self.propagation, workers=threads)
        if directory is not None:
            document["output"]["directory"] = str(directory)
            changes["output_directory"] = Path(directory)
        return replace(self, document=document, **changes)

    def for_worker(self) -> RunConfig:
        """Single-threaded transforms for one sweep point in a process pool."""
        return replace(self, propagation=replace(self.propagation, workers=1))


class _Reader:
    """Reads one TOML table, records resolved values, rejects unknown keys."""

    def __init__(
        self, document: Mapping[str, Any], resolved: dict[str, Any], table: str
    ) -> None:
        raw = document.get(table, {})
        if not isinstance(raw, Mapping):
            raise ConfigError("expected a table", table)
        self.table = table
        self.raw = dict(raw)
        self.out: dict[str, Any] = resolved.setdefault(table, {})
        unknown = sorted(set(self.raw) - KNOWN_KEYS[table])
        if unknown:
            raise ConfigError(f"unknown key {unknown[0]!r}", f"{table}.{unknown[0]}")

    def path(self, key: str) -> str:
        return f"{self.table}.{key}"

    def get(self, key: str, *, required: bool = False) -> Any:
        if key in self.raw:
            value = self.raw[key]
        elif key in DEFAULTS.get(self.table, {}):
            value = copy.deepcopy(DEFAULTS[self.table][key])
        elif required:
            raise ConfigError("missing required key", self.path(key))
        else:
            return None
        self.out[key] = value
        return value

    def quantity(self, key: str, dimension: Dimension) -> Quantity | None:
        raw = self.get(key)
        return None if raw is None else parse_quantity(raw, dimension, self.path(key))

    def require(self, key: str, dimension: Dimension) -> Quantity:
        """A quantity that is required or has a default."""
        raw = self.get(key, required=True)
        return parse_quantity(raw, dimension, self.path(key))

    def number(self, key: str, kind: type, *, required: bool = False) -> Any:
        raw = self.get(key, required=required)
        if raw is None:
            return None
        if isinstance(raw, bool) and kind is not bool:
            raise ConfigError(f"expected {kind.__name__}, got {raw!r}", self.path(key))
        if kind is float and isinstance(raw, int | float):
            return float(raw)
        if not isinstance(raw, kind):
            raise ConfigError(f"expected {kind.__name__}, got {raw!r}", self.path(key))
        return raw

    def choice(self, key: str, options: tuple[str, ...]) -> str:
        raw = self.get(key, required=True)
        if raw not in options:
            raise ConfigError(
                f"expected one of {', '.join(options)}, got {raw!r}", self.path(key)
            )
        return cast(str, raw)


def _checked(build: Callable[[], Any], path: str) -> Any:
    """Turn value-type validation errors into ConfigError."""
    try:
        return build()
    except ValueError as e:
        raise ConfigError(str(e), path) from e


def _lattice(
    doc: Mapping[str, Any], resolved: dict[str, Any]
) -> tuple[LatticeParams, HarmonicModel, Scales]:
    reader = _Reader(doc, resolved, "lattice")
    k_l = reader.require("k_L", Dimension.WAVENUMBER)
    si = si_base(k_l, reader.require("mass", Dimension.MASS), "lattice.k_L")
    form = reader.choice("harmonic_form", HARMONIC_FORMS)

    # internal energy unit: E_R = 1/2 with k_L = m = 1
    nan = math.nan
    bootstrap = Scales(e_r=0.5, l_x=nan, l_y=nan, l_z=nan, t_x=nan, t_y=nan, si=si)
    u_d0 = bootstrap.to_internal(
        reader.require("u_d0", Dimension.ENERGY), "lattice.u_d0"
    )
    angles = {
        name: angle_to_rad(reader.require(name, Dimension.ANGLE))
        for name in ("beta", "theta", "phi")
    }
    xi_z = reader.number("xi_z", float)
    k_z = bootstrap.to_internal(
        reader.require("k_z", Dimension.WAVENUMBER), "lattice.k_z"
    )
    plane = _checked(
        lambda: LatticeParams(u_d0=u_d0, xi_z=xi_z, k_z=k_z, **angles), "lattice"
    )
    try:
        leading = harmonic_approximation(plane, form=form, planar=xi_z == 0.0)
    except NumericalError as e:
        raise ConfigError(f"lattice does not confine: {e}", "lattice") from e
    scales = Scales(
        e_r=0.5,
        l_x=leading.l_x,
        l_y=leading.l_y,
        l_z=leading.l_z,
        t_x=leading.t_x,
        t_y=leading.t_y,
        si=si,
    )

    lengths: dict[str, float] = {}
    for name in ("w0x", "w0y", "z_Rx", "z_Ry"):
        q = reader.quantity(name, Dimension.LENGTH)
        if q is not None:
            lengths[name] = _scaled_length(scales, q, f"lattice.{name}")
    p = _checked(lambda: replace(plane, **lengths), "lattice")
    try:
        h = harmonic_approximation(p, form=form, planar=xi_z == 0.0)
    except NumericalError as e:
        raise ConfigError(f"lattice does not confine: {e}", "lattice") from e
    logger.debug(
        f"Resolved lattice: u_d0={u_d0:.6g}, omega=({h.omega_x:.6g}, "
        f"{h.omega_y:.6g}, {h.omega_z:.6g})"
    )
    return p, h, scales


def _scaled_length(scales: Scales, q: Quantity, path: str) -> float:
    if q.unit == "l_z" and not math.isfinite(scales.l_z):
        raise ConfigError("l_z is undefined for an unconfined z axis", path)
    return scales.to_internal(q, path)


def _lengths(scales: Scales, raw: list[Any], path: str) -> list[float]:
    out = []
    for i, item in enumerate(raw):
        field = f"{path}[{i}]"
        q = parse_quantity(item, Dimension.LENGTH, field)
        out.append(_scaled_length(scales, q, field))
    return out


def _grid(
    doc: Mapping[str, Any],
    resolved: dict[str, Any],
    scales: Scales,
    h: HarmonicModel,
    planar: bool,
) -> GridSpec:
    source = doc if "grid" in doc else {"grid": _default_grid(planar)}
    reader = _Reader(source, resolved, "grid")
    shape = reader.get("shape", required=True)
    extents_raw = reader.get("extents", required=True)
    if not (isinstance(shape, list) and all(isinstance(n, int) for n in shape)):
        raise ConfigError("expected a list of integers", "grid.shape")
    if not isinstance(extents_raw, list) or len(extents_raw) != len(shape):
        raise ConfigError("expected one extent per grid axis", "grid.extents")
    extents = _lengths(scales, extents_raw, "grid.extents")
    center_raw = reader.get("center")
    if center_raw is None:
        center = [h.equilibrium_x, 0.0, 0.0][: len(shape)]
    else:
        if not isinstance(center_raw, list) or len(center_raw) != len(shape):
            raise ConfigError(
                "expected one centre coordinate per grid axis", "grid.center"
            )
        center = _lengths(scales, center_raw, "grid.center")
    if len(shape) == 3 and h.omega_z == 0.0:
        raise ConfigError("a 3D grid needs z confinement (xi_z > 0)", "grid.shape")
    grid = _checked(lambda: GridSpec.centered(shape, extents, center), "grid")
    return cast(GridSpec, grid)


def _default_grid(planar: bool) -> dict[str, Any]:
    if planar:
        return {key: values[:2] for key, values in DEFAULT_GRID.items()}
    return dict(DEFAULT_GRID)


def _methods(raw: Any) -> tuple[str, ...]:
    names = raw if isinstance(raw, list) else [raw]
    for name in names:
        if name not in METHODS:
            raise ConfigError(f"expected sta or esta, got {name!r}", "method.name")
    if len(set(names)) != len(names) or not names:
        raise ConfigError("methods must be distinct and non-empty", "method.name")
    return tuple(names)


def _sweep(doc: Mapping[str, Any], resolved: dict[str, Any]) -> SweepAxis | None:
    if "sweep" not in doc:
        return None
    reader = _Reader(doc, resolved, "sweep")
    variable = reader.get("variable", required=True)
    if variable not in SWEEP_VARIABLES:
        raise ConfigError(
            f"expected one of {', '.join(SWEEP_VARIABLES)}, got {variable!r}",
            "sweep.variable",
        )
    values = reader.get("values", required=True)
    if not isinstance(values, list) or not values:
        raise ConfigError("expected a non-empty list", "sweep.values")
    return SweepAxis(variable, tuple(values))


def load_config(
    document: Mapping[str, Any], *, source: Path | None = None
) -> RunConfig:
    """Validate a parsed TOML document and resolve it to internal units.

    Raises:
        ConfigError: naming the dotted path of the offending field.
    """
    unknown = sorted(set(document) - set(KNOWN_KEYS))
    if unknown:
        raise ConfigError(f"unknown table {unknown[0]!r}", unknown[0])
    resolved: dict[str, Any] = {}
    p, h, scales = _lattice(document, resolved)

    transport = _Reader(document, resolved, "transport")
    l_r_q = transport.require("l_r", Dimension.LENGTH)
    if l_r_q.unit == "l_r":
        raise ConfigError("l_r cannot be given in l_r", "transport.l_r")
    l_r = _scaled_length(scales, l_r_q, "transport.l_r")
    scales = replace(scales, l_r=l_r)
    directions = tuple(d.value for d in TransportDirection)
    direction = transport.choice("direction", directions)
    distance = _scaled_length(
        scales, transport.require("distance", Dimension.LENGTH), "transport.distance"
    )
    t_f = scales.to_internal(transport.require("t_f", Dimension.TIME), "transport.t_f")
    spec = _checked(
        lambda: TransportSpec(TransportDirection(direction), distance, t_f), "transport"
    )

    method = _Reader(document, resolved, "method")
    methods = _methods(method.get("name"))
    cutoff = method.number("cutoff", int)
    if cutoff < 1:
        raise ConfigError("cutoff must be at least 1", "method.cutoff")
    basis = cast(BasisPolicy, method.choice("basis", BASIS_POLICIES))
    force_zero = method.number("force_zero_correction", bool)

    planar = p.xi_z == 0.0
    grid = _grid(document, resolved, scales, h, planar)

    potential = cast(
        PotentialModel,
        _Reader(document, resolved, "potential").choice("model", POTENTIAL_MODELS),
    )

    prop = _Reader(document, resolved, "propagation")
    dt_q = prop.quantity("dt_initial", Dimension.TIME)
    dt_initial = None
    if dt_q is not None:
        dt_initial = scales.to_internal(dt_q, "propagation.dt_initial")
    propagation = _checked(
        lambda: PropagationConfig(
            dt_initial=dt_initial,
            max_rel_error=prop.number("max_rel_error", float),
            min_steps=prop.number("min_steps", int),
            max_steps=prop.number("max_steps", int),
            max_substeps=prop.number("max_substeps", int),
            adaptive=prop.number("adaptive", bool),
            boundary_tolerance=prop.number("boundary_tolerance", float),
            boundary_policy=prop.choice("boundary_policy", ("abort", "warn")),
        ),
        "propagation",
    )

    gs = _Reader(document, resolved, "ground_state")
    dtau_q = gs.quantity("dtau", Dimension.TIME)
    dtau = None if dtau_q is None else scales.to_internal(dtau_q, "ground_state.dtau")
    ground_state = GroundStateConfig(
        tol_energy=gs.number("tol_energy", float),
        dtau=dtau,
        max_iter=gs.number("max_iter", int),
        trial=gs.choice("trial", TRIAL_STATES),
    )
    if not ground_state.tol_energy > 0:
        raise ConfigError("must be positive", "ground_state.tol_energy")

    sweep = _sweep(document, resolved)

    output = _Reader(document, resolved, "output")
    fractions_raw = output.get("snapshot_fractions")
    if not isinstance(fractions_raw, list) or not all(
        isinstance(f, int | float) and not isinstance(f, bool) and 0.0 <= f <= 1.0
        for f in fractions_raw
    ):
        raise ConfigError(
            "expected a list of numbers in [0, 1]", "output.snapshot_fractions"
        )
    samples = output.number("trajectory_samples", int)
    if samples < 2:
        raise ConfigError("need at least two samples", "output.trajectory_samples")

    run = _Reader(document, resolved, "run")
    threads = run.number("threads", int)
    if threads < 1:
        raise ConfigError("must be at least 1", "run.threads")

    return RunConfig(
        document=resolved,
        lattice=p,
        harmonic=h,
        scales=scales,
        transport=spec,
        l_r=l_r,
        methods=methods,
        cutoff=cutoff,
        basis=basis,
        force_zero_correction=force_zero,
        grid=grid,
        potential_model=potential,
        propagation=replace(propagation, workers=threads),
        ground_state=ground_state,
        sweep=sweep,
        output_directory=Path(output.get("directory")),
        snapshot_fractions=tuple(float(f) for f in fractions_raw),
        trajectory_samples=samples,
        seed=run.number("seed", int),
        threads=threads,
        source=source,
    )


def read_config(path: str | Path) -> RunConfig:
    """Load a TOML run file; syntax errors report line and column."""
    path = Path(path)
    try:
        with open(path, "rb") as f:
            document = tomllib.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"no such file: {path}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    logger.debug(f"Loaded run config from {path}")
    return load_config(document, source=path)
