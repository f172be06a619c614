"""Experiment orchestration: design, ground state, transport and sweeps.

Each ``run_*`` function takes a resolved :class:`~dwoltransport.config.RunConfig`,
writes its artifacts under the configured output directory and returns the
in-memory result. Sweep points run in a process pool; the collector writes
CSV rows in sweep-value order as soon as each point and its predecessors finish.
"""

from __future__ import annotations

import logging
import math
import time
from collections.abc import Callable, Iterator, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray

from .artifacts import (
    CsvWriter,
    dump_wavefield,
    write_csv,
    write_gnuplot,
    write_json,
)
from .config import TRANSPORT_VARIABLES, RunConfig
from .dynamics import (
    PropagationResult,
    WaveField,
    double_well_trial,
    fidelity,
    harmonic_ground_state,
    ite_ground_state,
    potential_on_grid,
    propagate,
)
from .errors import ConfigError, DwolError, NumericalError
from .esta import design_esta
from .lattice import critical_acceleration, intermediate_barrier_acceleration
from .sta import Trajectory, design_sta, min_transport_time, peak_acceleration

logger = logging.getLogger(__name__)

FIDELITY_SLACK = 1e-9
NORM_DRIFT_LIMIT = 1e-10
BREAKDOWN_THRESHOLD = 0.9


# --- design -------------------------------------------------------------------


def design_trajectory(cfg: RunConfig, method: str) -> Trajectory:
    if method == "sta":
        return design_sta(cfg.transport, cfg.harmonic)
    return design_esta(
        cfg.transport,
        cfg.lattice,
        cfg.harmonic,
        cfg.cutoff,
        policy=cfg.basis,
        dims=cfg.dims,
        force_zero=cfg.force_zero_correction,
    )


TRAJECTORY_COLUMNS = ("t_over_tx", "q_x", "q_y", "v_x", "v_y", "a_x", "a_y")


def trajectory_rows(cfg: RunConfig, traj: Trajectory) -> list[list[float]]:
    """Samples of (q, q̇, q̈) in l_x and T_x units."""
    l_x, t_x = cfg.scales.l_x, cfg.scales.t_x
    t = np.linspace(0.0, traj.t_f, cfg.trajectory_samples)
    table = traj.sample(t)
    units = np.array([l_x, l_x, l_x / t_x, l_x / t_x, l_x / t_x**2, l_x / t_x**2])
    scaled = table / units[:, None]
    return [[float(t[i] / t_x), *map(float, scaled[:, i])] for i in range(t.size)]


def harmonic_record(cfg: RunConfig) -> dict[str, Any]:
    h, scales = cfg.harmonic, cfg.scales
    record: dict[str, Any] = {
        "form": h.form,
        "omega_T_x": [w * scales.t_x for w in h.omegas],
        "l_over_l_x": [length / scales.l_x for length in (h.l_x, h.l_y, h.l_z)],
        "v_d0_E_R": h.v_d0 / scales.e_r,
        "a_x_l_x_per_T_x2": h.a_x * scales.t_x**2 / scales.l_x,
        "warnings": list(h.warnings),
    }
    if scales.si is not None:
        record["si"] = {
            "l_x_m": scales.l_x * scales.si.length_m,
            "T_x_s": scales.t_x * scales.si.time_s,
            "E_R_J": scales.e_r * scales.si.energy_j,
        }
    return record


@dataclass(frozen=True, eq=False)
class DesignResult:
    trajectories: dict[str, Trajectory]
    files: list[Path] = field(default_factory=list)


def run_design(cfg: RunConfig) -> DesignResult:
    """Trajectory tables, coefficient record and eSTA correction reports."""
    out = cfg.output_directory
    config_toml = cfg.to_toml()
    trajectories: dict[str, Trajectory] = {}
    files: list[Path] = []
    for method in cfg.methods:
        traj = design_trajectory(cfg, method)
        trajectories[method] = traj
        files.append(
            write_csv(
                out / f"trajectory_{method}.csv",
                TRAJECTORY_COLUMNS,
                trajectory_rows(cfg, traj),
                config_toml,
            )
        )
        if traj.correction is not None:
            files.append(
                write_json(
                    out / "correction.json",
                    traj.correction.to_record(cfg.scales.l_x),
                    cfg.document,
                )
            )
    coefficients = {
        method: {
            "provenance": traj.provenance.value,
            "x_l_x": [float(c) for c in traj.coefficients("x") / cfg.scales.l_x],
            "y_l_x": [float(c) for c in traj.coefficients("y") / cfg.scales.l_x],
            "peak_acceleration_l_x_per_T_x2": peak_acceleration(traj)
            * cfg.scales.t_x**2
            / cfg.scales.l_x,
        }
        for method, traj in trajectories.items()
    }
    files.append(
        write_json(
            out / "coefficients.json",
            {
                "t_f_over_tx": cfg.transport.t_f / cfg.scales.t_x,
                "variable": "s = t / t_f",
                "harmonic": harmonic_record(cfg),
                "trajectories": coefficients,
            },
            cfg.document,
        )
    )
    return DesignResult(trajectories, files)


# --- ground state ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GroundState:
    state: WaveField
    energy: float
    potential: NDArray[np.float64]


def compute_ground_state(cfg: RunConfig) -> GroundState:
    potential = potential_on_grid(
        cfg.grid, cfg.lattice, model=cfg.potential_model, h=cfg.harmonic
    )
    if cfg.ground_state.trial == "symmetric":
        trial = double_well_trial(cfg.grid, cfg.lattice, cfg.harmonic)
    else:
        trial = harmonic_ground_state(cfg.grid, cfg.harmonic)
    state, energy = ite_ground_state(
        potential,
        cfg.grid,
        tol_energy=cfg.ground_state.tol_energy,
        dtau=cfg.ground_state.dtau,
        trial=trial,
        max_iter=cfg.ground_state.max_iter,
        workers=cfg.propagation.workers,
    )
    return GroundState(state, energy, potential)


def run_groundstate(cfg: RunConfig) -> tuple[GroundState, list[Path]]:
    ground = compute_ground_state(cfg)
    out = cfg.output_directory
    files = [
        dump_wavefield(out / "groundstate.wf", ground.state),
        write_json(
            out / "groundstate.json",
            {
                "energy_E_R": ground.energy / cfg.scales.e_r,
                "harmonic_energy_E_R": cfg.harmonic.energy((0, 0, 0)) / cfg.scales.e_r,
                "grid": {
                    "shape": list(cfg.grid.shape),
                    "spacings_l_x": [d / cfg.scales.l_x for d in cfg.grid.spacings],
                },
                "harmonic": harmonic_record(cfg),
            },
            cfg.document,
        ),
    ]
    return ground, files


# --- transport -------------------------------------------------------------------


@dataclass(frozen=True)
class TransportRow:
    method: str
    t_f_over_tx: float
    fidelity: float
    accepted_steps: int
    rejected_steps: int
    norm_drift: float
    wall_time: float
    diagnostics: tuple[str, ...] = ()


def transport(
    cfg: RunConfig,
    method: str,
    ground: GroundState,
    *,
    snapshot_fractions: Sequence[float] = (),
    on_step: Callable[[float], None] | None = None,
) -> tuple[TransportRow, PropagationResult]:
    """Design, propagate from the ground state, and score against it.

    Raises:
        NumericalError: the fidelity exceeds 1 + 1e-9.
    """
    started = time.perf_counter()
    traj = design_trajectory(cfg, method)
    t_f = traj.t_f
    result = propagate(
        replace(ground.state, time=0.0),
        traj,
        ground.potential,
        cfg.propagation,
        snapshot_times=[f * t_f for f in snapshot_fractions],
        on_step=on_step,
    )
    value = fidelity(ground.state, result.final)
    if value > 1 + FIDELITY_SLACK:
        raise NumericalError(f"fidelity {value!r} exceeds 1")
    flags = list(cfg.harmonic.warnings)
    if traj.correction is not None:
        flags.extend(traj.correction.diagnostics)
    flags.extend(result.diagnostics)
    if result.norm_drift > NORM_DRIFT_LIMIT:
        flags.append("norm-drift")
    row = TransportRow(
        method=method,
        t_f_over_tx=t_f / cfg.scales.t_x,
        fidelity=value,
        accepted_steps=result.accepted_steps,
        rejected_steps=result.rejected_steps,
        norm_drift=result.norm_drift,
        wall_time=time.perf_counter() - started,
        diagnostics=tuple(dict.fromkeys(flags)),
    )
    logger.debug(
        f"{method} transport t_f={row.t_f_over_tx:.4g} T_x: fidelity={value:.8f}, "
        f"{row.accepted_steps} steps"
    )
    return row, result


TRANSPORT_COLUMNS = (
    "method",
    "t_f_over_tx",
    "fidelity",
    "accepted_steps",
    "rejected_steps",
    "norm_drift",
    "diagnostics",
)


def run_transport(
    cfg: RunConfig,
    *,
    ground: GroundState | None = None,
    on_step: Callable[[float], None] | None = None,
) -> tuple[list[TransportRow], list[Path]]:
    """ITE, then one transport per configured method, plus snapshot dumps."""
    ground = ground or compute_ground_state(cfg)
    out = cfg.output_directory
    rows: list[TransportRow] = []
    files: list[Path] = []
    for method in cfg.methods:
        row, result = transport(
            cfg,
            method,
            ground,
            snapshot_fractions=cfg.snapshot_fractions,
            on_step=on_step,
        )
        rows.append(row)
        for fraction in cfg.snapshot_fractions:
            snapshot = result.snapshots.get(fraction * cfg.transport.t_f)
            if snapshot is not None:
                files.append(
                    dump_wavefield(out / f"snapshot_{method}_{fraction:g}.wf", snapshot)
                )
    config_toml = cfg.to_toml()
    files.append(
        write_csv(
            out / "transport.csv",
            TRANSPORT_COLUMNS,
            [
                [
                    r.method,
                    r.t_f_over_tx,
                    r.fidelity,
                    r.accepted_steps,
                    r.rejected_steps,
                    r.norm_drift,
                    ";".join(r.diagnostics),
                ]
                for r in rows
            ],
            config_toml,
        )
    )
    files.append(
        write_csv(
            out / "transport.timing.csv",
            ("method", "wall_time_s"),
            [[r.method, r.wall_time] for r in rows],
            config_toml,
        )
    )
    files.append(
        write_json(
            out / "transport.json",
            {
                "ground_state_energy_E_R": ground.energy / cfg.scales.e_r,
                "rows": [
                    {
                        "method": r.method,
                        "t_f_over_tx": r.t_f_over_tx,
                        "fidelity": r.fidelity,
                        "accepted_steps": r.accepted_steps,
                        "rejected_steps": r.rejected_steps,
                        "norm_drift": r.norm_drift,
                        "diagnostics": list(r.diagnostics),
                    }
                    for r in rows
                ],
            },
            cfg.document,
        )
    )
    return rows, files


# --- sweeps ----------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    value: Any
    t_f_over_tx: float
    results: dict[str, TransportRow | None]
    diagnostics: tuple[str, ...] = ()

    def fidelity(self, method: str) -> float:
        row = self.results.get(method)
        return math.nan if row is None else row.fidelity


@dataclass(frozen=True)
class SweepResult:
    variable: str
    methods: tuple[str, ...]
    rows: list[SweepRow]
    onsets: dict[str, float | None]
    files: list[Path] = field(default_factory=list)

    @property
    def failed_rows(self) -> list[SweepRow]:
        """Rows where the ground state or a method raised."""
        return [r for r in self.rows if any(":error:" in d for d in r.diagnostics)]


def _sweep_key(cfg: RunConfig, variable: str) -> float:
    table, key = variable.split(".", 1)
    if table == "transport":
        return cfg.transport.t_f if key == "t_f" else cfg.transport.distance
    if table == "method":
        return float(cfg.cutoff)
    return float(getattr(cfg.lattice, key))


@dataclass(frozen=True, eq=False)
class _SweepTask:
    cfg: RunConfig
    value: Any
    ground: GroundState | None
    failure: str | None = None


def _sweep_point(task: _SweepTask) -> SweepRow:
    """One sweep point; failures become diagnostics instead of exceptions."""
    cfg = task.cfg
    results: dict[str, TransportRow | None] = {}
    flags: list[str] = []
    if task.failure is not None:
        return SweepRow(
            task.value,
            cfg.transport.t_f / cfg.scales.t_x,
            dict.fromkeys(cfg.methods),
            (task.failure,),
        )
    try:
        ground = task.ground or compute_ground_state(cfg)
    except DwolError as e:
        logger.warning(f"Sweep point {task.value}: ground state failed: {e}")
        return SweepRow(
            task.value,
            cfg.transport.t_f / cfg.scales.t_x,
            dict.fromkeys(cfg.methods),
            (f"groundstate:error:{type(e).__name__}",),
        )
    for method in cfg.methods:
        try:
            row, _ = transport(cfg, method, ground)
        except DwolError as e:
            logger.warning(f"Sweep point {task.value} ({method}) failed: {e}")
            results[method] = None
            flags.append(f"{method}:error:{type(e).__name__}")
            continue
        results[method] = row
        flags.extend(f"{method}:{flag}" for flag in row.diagnostics)
    t_f_over_tx = cfg.transport.t_f / cfg.scales.t_x
    return SweepRow(task.value, t_f_over_tx, results, tuple(flags))


def _run_points(tasks: list[_SweepTask], threads: int) -> Iterator[SweepRow]:
    if threads == 1 or len(tasks) == 1:
        yield from map(_sweep_point, tasks)
        return
    with ProcessPoolExecutor(max_workers=threads) as pool:
        # map yields in submission order, so rows stay sorted
        yield from pool.map(_sweep_point, tasks)


def breakdown_onset(
    rows: Sequence[SweepRow], method: str, threshold: float = BREAKDOWN_THRESHOLD
) -> float | None:
    """Largest t_f/T_x where the fidelity crosses ``threshold`` from below.

    Linear interpolation between neighbouring rows; ``None`` when the sweep
    never crosses.
    """
    points = sorted(
        (r.t_f_over_tx, r.fidelity(method))
        for r in rows
        if not math.isnan(r.fidelity(method))
    )
    for (t0, f0), (t1, f1) in reversed(list(zip(points, points[1:], strict=False))):
        if f0 < threshold <= f1:
            return t0 + (threshold - f0) * (t1 - t0) / (f1 - f0)
    return None


def sweep_columns(variable: str, methods: Sequence[str]) -> list[str]:
    columns = [variable, "t_f_over_tx"]
    for method in methods:
        columns += [f"fidelity_{method}", f"steps_{method}"]
    columns.append("diagnostics")
    return columns


def run_sweep(
    cfg: RunConfig,
    *,
    on_row: Callable[[SweepRow], None] | None = None,
) -> SweepResult:
    """Run every sweep value and write ``sweep.csv`` incrementally.

    Raises:
        ConfigError: the configuration has no [sweep] table or a value is invalid.
    """
    if cfg.sweep is None:
        raise ConfigError("the sweep command needs a [sweep] table", "sweep")
    variable = cfg.sweep.variable
    points = [
        (_sweep_key(point, variable), value, point)
        for value in cfg.sweep.values
        for point in [cfg.with_value(variable, value)]
    ]
    points.sort(key=lambda item: item[0])

    shared: GroundState | None = None
    failure: str | None = None
    if variable in TRANSPORT_VARIABLES:
        logger.debug("Potential is fixed across the sweep, sharing one ground state")
        try:
            shared = compute_ground_state(points[0][2])
        except DwolError as e:
            logger.warning(f"Shared ground state failed: {e}")
            failure = f"groundstate:error:{type(e).__name__}"
    threads = cfg.threads
    tasks = [
        _SweepTask(
            point.for_worker() if threads > 1 else point, value, shared, failure
        )
        for _, value, point in points
    ]

    out = cfg.output_directory
    config_toml = cfg.to_toml()
    columns = sweep_columns(variable, cfg.methods)
    rows: list[SweepRow] = []
    with CsvWriter(out / "sweep.csv", columns, config_toml) as writer, CsvWriter(
        out / "sweep.timing.csv",
        [variable, *(f"wall_time_{m}" for m in cfg.methods)],
        config_toml,
    ) as timing:
        for row in _run_points(tasks, threads):
            cells: list[Any] = [row.value, row.t_f_over_tx]
            for method in cfg.methods:
                result = row.results.get(method)
                cells += [
                    math.nan if result is None else result.fidelity,
                    0 if result is None else result.accepted_steps,
                ]
            cells.append(";".join(row.diagnostics))
            writer.write_row(cells)
            timing.write_row(
                [
                    row.value,
                    *(
                        math.nan if (r := row.results.get(m)) is None else r.wall_time
                        for m in cfg.methods
                    ),
                ]
            )
            rows.append(row)
            if on_row is not None:
                on_row(row)

    onsets = {method: breakdown_onset(rows, method) for method in cfg.methods}
    files = [out / "sweep.csv", out / "sweep.timing.csv"]
    files.append(
        write_gnuplot(
            out / "sweep.gp",
            "sweep.csv",
            columns,
            "t_f_over_tx",
            [f"fidelity_{m}" for m in cfg.methods],
            config_toml,
        )
    )
    files.append(
        write_json(
            out / "sweep.json",
            {
                "variable": variable,
                "breakdown_threshold": BREAKDOWN_THRESHOLD,
                "breakdown_onset_t_f_over_tx": onsets,
                "rows": len(rows),
            },
            cfg.document,
        )
    )
    return SweepResult(variable, cfg.methods, rows, onsets, files)


# --- scales ----------------------------------------------------------------------


def scales_report(cfg: RunConfig) -> dict[str, Any]:
    """Harmonic scales, critical accelerations and the minimum transport time."""
    scales = cfg.scales
    accel = scales.l_x / scales.t_x**2
    a_x = critical_acceleration(cfg.lattice, "x")
    a_y = critical_acceleration(cfg.lattice, "y")
    a_int = intermediate_barrier_acceleration(cfg.lattice)
    limit = a_x if cfg.transport.direction.value == "x" else min(a_x, a_y)
    t_min = math.nan
    if limit > 0:
        t_min = min_transport_time(cfg.transport, cfg.harmonic, limit)
    return {
        "harmonic": harmonic_record(cfg),
        "critical_acceleration_x_l_x_per_T_x2": a_x / accel,
        "critical_acceleration_y_l_x_per_T_x2": a_y / accel,
        "intermediate_barrier_acceleration_l_x_per_T_x2": a_int / accel,
        "sta_peak_acceleration_l_x_per_T_x2": peak_acceleration(
            design_sta(cfg.transport, cfg.harmonic)
        )
        / accel,
        "min_transport_time_T_x": t_min / scales.t_x,
    }
