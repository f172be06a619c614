"""Tests for experiment orchestration and its artifacts."""

from __future__ import annotations

import copy
import json
import math
from pathlib import Path

import pytest

from dwoltransport.artifacts import load_wavefield, read_csv_rows
from dwoltransport.config import load_config, read_config
from dwoltransport.errors import ConfigError, NumericalError
from dwoltransport.runner import (
    BREAKDOWN_THRESHOLD,
    TRAJECTORY_COLUMNS,
    TRANSPORT_COLUMNS,
    SweepRow,
    TransportRow,
    breakdown_onset,
    run_design,
    run_groundstate,
    run_sweep,
    run_transport,
    scales_report,
    sweep_columns,
)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def run_cfg(base_document):
    """Resolved base run."""
    return load_config(base_document)


@pytest.fixture
def sweep_cfg(base_document):
    """Base run sweeping t_f over unsorted values."""
    document = copy.deepcopy(base_document)
    document["sweep"] = {"variable": "transport.t_f", "values": ["3 T_x", "1 T_x", "2 T_x"]}
    return load_config(document)


def sweep_row(t, fidelity):
    """Sweep row with a single STA result."""
    result = None
    if not math.isnan(fidelity):
        result = TransportRow("sta", t, fidelity, 10, 0, 0.0, 0.0)
    return SweepRow(f"{t} T_x", t, {"sta": result})


class TestDesign:
    """Test the design stage."""

    def test_trajectory_table(self, run_cfg):
        """Test the trajectory table runs from rest at 0 to rest at d."""
        result = run_design(run_cfg)
        path = run_cfg.output_directory / "trajectory_sta.csv"
        assert path in result.files
        columns, rows = read_csv_rows(path)
        assert columns == list(TRAJECTORY_COLUMNS)
        assert len(rows) == 11
        first, last = [float(v) for v in rows[0]], [float(v) for v in rows[-1]]
        assert first[1] == pytest.approx(0.0, abs=1e-12)
        assert last[0] == pytest.approx(2.0)
        assert last[1] == pytest.approx(10.0)
        assert last[3] == pytest.approx(0.0, abs=1e-8)

    def test_coefficients_record(self, run_cfg):
        """Test the coefficient record carries provenance and the configuration."""
        run_design(run_cfg)
        record = json.loads(
            (run_cfg.output_directory / "coefficients.json").read_text(encoding="utf-8")
        )
        assert record["trajectories"]["sta"]["provenance"] == "sta"
        assert record["t_f_over_tx"] == pytest.approx(2.0)
        assert record["config"] == run_cfg.document
        assert record["harmonic"]["omega_T_x"][0] == pytest.approx(2 * math.pi)

    def test_forced_zero_esta_matches_sta(self, base_document):
        """Test a forced-zero eSTA table is identical to the STA one."""
        document = copy.deepcopy(base_document)
        document["method"] = {"name": ["sta", "esta"], "force_zero_correction": True}
        cfg = load_config(document)
        result = run_design(cfg)
        _, sta_rows = read_csv_rows(cfg.output_directory / "trajectory_sta.csv")
        _, esta_rows = read_csv_rows(cfg.output_directory / "trajectory_esta.csv")
        assert esta_rows == sta_rows
        assert (cfg.output_directory / "correction.json").exists()
        assert result.trajectories["esta"].provenance.value == "esta"


class TestGroundState:
    """Test the ground-state stage."""

    def test_energy_and_dump(self, run_cfg):
        """Test the ground state matches the harmonic energy and is dumped."""
        ground, files = run_groundstate(run_cfg)
        h = run_cfg.harmonic
        expected = 0.5 * h.omega_x + float(h.potential(h.equilibrium_x))
        assert ground.energy == pytest.approx(expected, abs=1e-4 * h.omega_x)
        loaded = load_wavefield(run_cfg.output_directory / "groundstate.wf")
        assert loaded.grid.shape == run_cfg.grid.shape
        record = json.loads(files[1].read_text(encoding="utf-8"))
        assert record["energy_E_R"] == pytest.approx(ground.energy / 0.5)


class TestTransport:
    """Test single transports."""

    def test_harmonic_sta_transport(self, run_cfg):
        """Test STA transport in the harmonic potential returns to the ground state."""
        cfg = run_cfg.with_overrides(snapshot_fractions=[0.5])
        rows, files = run_transport(cfg)
        assert [r.method for r in rows] == ["sta"]
        assert rows[0].fidelity > 0.999
        assert rows[0].t_f_over_tx == pytest.approx(2.0)
        columns, table = read_csv_rows(cfg.output_directory / "transport.csv")
        assert columns == list(TRANSPORT_COLUMNS)
        assert len(table) == 1
        assert (cfg.output_directory / "snapshot_sta_0.5.wf") in files
        assert (cfg.output_directory / "transport.timing.csv").exists()
        record = json.loads((cfg.output_directory / "transport.json").read_text(encoding="utf-8"))
        assert record["rows"][0]["fidelity"] == pytest.approx(rows[0].fidelity)


class TestSweep:
    """Test parameter sweeps."""

    def test_rows_in_sweep_order(self, sweep_cfg):
        """Test rows are written sorted by the swept t_f."""
        seen: list[float] = []
        result = run_sweep(sweep_cfg, on_row=lambda row: seen.append(row.t_f_over_tx))
        assert seen == pytest.approx([1.0, 2.0, 3.0])
        columns, rows = read_csv_rows(sweep_cfg.output_directory / "sweep.csv")
        assert columns == sweep_columns("transport.t_f", ("sta",))
        assert [r[0] for r in rows] == ["1 T_x", "2 T_x", "3 T_x"]
        assert all(float(r[2]) > 0.99 for r in rows)
        assert (sweep_cfg.output_directory / "sweep.gp") in result.files
        assert result.onsets == {"sta": None}

    def test_failures_become_diagnostics(self, sweep_cfg, monkeypatch):
        """Test a failing transport yields NaN rows instead of stopping the sweep."""

        def fail(*args, **kwargs):
            raise NumericalError("fidelity 1.1 exceeds 1")

        monkeypatch.setattr("dwoltransport.runner.transport", fail)
        result = run_sweep(sweep_cfg)
        assert len(result.rows) == 3
        _, rows = read_csv_rows(sweep_cfg.output_directory / "sweep.csv")
        assert [r[2] for r in rows] == ["nan"] * 3
        assert [r[3] for r in rows] == ["0"] * 3
        assert all(r[-1] == "sta:error:NumericalError" for r in rows)
        assert result.failed_rows == result.rows

    def test_shared_ground_state_failure_recorded_per_row(self, sweep_cfg, monkeypatch, caplog):
        """Test a failing shared ground state marks every row and skips transport."""
        calls = []

        def fail(cfg):
            calls.append(cfg)
            raise NumericalError("imaginary-time evolution did not converge")

        def never(*args, **kwargs):
            raise AssertionError("transport must not run without a ground state")

        monkeypatch.setattr("dwoltransport.runner.compute_ground_state", fail)
        monkeypatch.setattr("dwoltransport.runner.transport", never)
        with caplog.at_level("WARNING", logger="dwoltransport.runner"):
            result = run_sweep(sweep_cfg)
        assert len(calls) == 1
        assert len(result.rows) == 3
        assert result.failed_rows == result.rows
        assert all(math.isnan(row.fidelity("sta")) for row in result.rows)
        assert result.onsets == {"sta": None}
        _, rows = read_csv_rows(sweep_cfg.output_directory / "sweep.csv")
        assert [r[0] for r in rows] == ["1 T_x", "2 T_x", "3 T_x"]
        assert [r[2] for r in rows] == ["nan"] * 3
        assert all(r[-1] == "groundstate:error:NumericalError" for r in rows)
        assert any("Shared ground state failed" in r.message for r in caplog.records)

    def test_needs_sweep_table(self, run_cfg):
        """Test sweeping without [sweep] is a configuration error."""
        with pytest.raises(ConfigError, match="sweep"):
            run_sweep(run_cfg)

    def test_sweep_columns(self):
        """Test each method contributes a fidelity and a step column."""
        assert sweep_columns("lattice.u_d0", ("sta", "esta")) == [
            "lattice.u_d0",
            "t_f_over_tx",
            "fidelity_sta",
            "steps_sta",
            "fidelity_esta",
            "steps_esta",
            "diagnostics",
        ]


class TestBreakdownOnset:
    """Test the fidelity breakdown estimate."""

    def test_interpolates_crossing(self):
        """Test the crossing is interpolated between neighbouring rows."""
        rows = [sweep_row(1.0, 0.5), sweep_row(2.0, 0.8), sweep_row(3.0, 1.0)]
        assert breakdown_onset(rows, "sta") == pytest.approx(2.5)

    def test_largest_crossing_wins(self):
        """Test the last upward crossing in t_f is reported."""
        rows = [sweep_row(1.0, 0.95), sweep_row(2.0, 0.5), sweep_row(3.0, 0.95)]
        assert breakdown_onset(rows, "sta") == pytest.approx(2.0 + 0.4 / 0.45)

    def test_failed_points_skipped(self):
        """Test NaN rows are ignored and no crossing gives None."""
        rows = [sweep_row(1.0, math.nan), sweep_row(2.0, 0.95), sweep_row(3.0, 0.99)]
        assert breakdown_onset(rows, "sta") is None


class TestScales:
    """Test the scales report."""

    def test_report(self, run_cfg):
        """Test accelerations and the minimum time are reported in harmonic units."""
        report = scales_report(run_cfg)
        assert report["critical_acceleration_x_l_x_per_T_x2"] > 0
        assert (
            report["intermediate_barrier_acceleration_l_x_per_T_x2"]
            <= report["critical_acceleration_x_l_x_per_T_x2"]
        )
        assert report["sta_peak_acceleration_l_x_per_T_x2"] > 0
        assert 0 < report["min_transport_time_T_x"]
        assert report["harmonic"]["l_over_l_x"][0] == pytest.approx(1.0)


@pytest.mark.slow
class TestBreakdownTrend:
    """Acceptance sweeps of the full lattice on a 256×256 (x, y) grid."""

    @pytest.fixture
    def sweep_at(self, tmp_path):
        """Run a shipped t_f sweep into a temporary directory."""

        def run(name):
            cfg = read_config(CONFIGS / name).with_overrides(directory=tmp_path / name)
            assert cfg.grid.shape == (256, 256)
            assert len(cfg.sweep.values) == 8
            return run_sweep(cfg)

        return run

    def test_onset_moves_earlier_with_depth(self, sweep_at):
        """Test STA collapses at 3 T_x and breaks down earlier at 150 E_R than at 50 E_R."""
        shallow = sweep_at("sweep_tf_50er.toml")
        deep = sweep_at("sweep_tf_150er.toml")
        for result in (shallow, deep):
            assert not result.failed_rows
            assert result.rows[0].t_f_over_tx == pytest.approx(3.0)
            assert result.rows[0].fidelity("sta") < 0.5
        onset_shallow = shallow.onsets["sta"]
        onset_deep = deep.onsets["sta"]
        assert onset_shallow is not None
        assert onset_deep is not None
        assert onset_deep < onset_shallow
        assert onset_shallow == pytest.approx(3.8, abs=0.5)
        assert onset_deep == pytest.approx(3.3, abs=0.5)

    def test_esta_beats_sta_in_deep_lattice(self, sweep_at):
        """Test eSTA is at least as good as STA and holds up where STA drops below 0.9."""
        result = sweep_at("esta_vs_sta.toml")
        assert [row.t_f_over_tx for row in result.rows] == pytest.approx([3.0, 3.25])
        for row in result.rows:
            assert row.fidelity("esta") >= row.fidelity("sta")
        broken = [row for row in result.rows if row.fidelity("sta") < BREAKDOWN_THRESHOLD]
        assert broken
        for row in broken:
            assert row.fidelity("esta") >= 0.85
            assert row.fidelity("sta") <= row.fidelity("esta") - 0.02
