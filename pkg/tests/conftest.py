"""Shared pytest fixtures for dwoltransport tests."""

from __future__ import annotations

import copy
import math
from pathlib import Path
from typing import Any

import pytest
import tomli_w

from dwoltransport.dynamics import GridSpec
from dwoltransport.lattice import (
    HarmonicModel,
    LatticeParams,
    harmonic_approximation,
    reference_lattice,
)

BETA = 0.15 * math.pi


@pytest.fixture
def plane_lattice() -> LatticeParams:
    """Plane-wave lattice at 1500 E_R (u_d0 = 750 internal) without z confinement."""
    return LatticeParams(u_d0=750.0, beta=BETA, theta=math.pi / 2, phi=math.pi / 2)


@pytest.fixture
def plane_harmonic(plane_lattice) -> HarmonicModel:
    """Planar harmonic model of the plane-wave lattice."""
    return harmonic_approximation(plane_lattice, planar=True)


@pytest.fixture
def gaussian_lattice() -> LatticeParams:
    """Lattice with finite waists and a weak z standing wave."""
    return reference_lattice(1500, xi_z=0.05)


@pytest.fixture
def gaussian_harmonic(gaussian_lattice) -> HarmonicModel:
    """Three-dimensional harmonic model of the Gaussian-beam lattice."""
    return harmonic_approximation(gaussian_lattice)


@pytest.fixture
def line_grid(plane_harmonic) -> GridSpec:
    """128-point grid spanning 32 l_x around the harmonic minimum."""
    return GridSpec.centered(
        [128], [32 * plane_harmonic.l_x], [plane_harmonic.equilibrium_x]
    )


@pytest.fixture
def base_document(tmp_path) -> dict[str, Any]:
    """Small, fast run: 1D harmonic potential, one STA transport."""
    return {
        "lattice": {"u_d0": "1500 E_R", "beta": "0.15 pi"},
        "transport": {"direction": "x", "distance": "10 l_x", "t_f": "2 T_x"},
        "method": {"name": "sta"},
        "potential": {"model": "harmonic"},
        "grid": {"shape": [128], "extents": ["48 l_x"]},
        "ground_state": {"tol_energy": 1e-8},
        "output": {"directory": str(tmp_path / "out"), "trajectory_samples": 11},
    }


@pytest.fixture
def write_run_config(tmp_path, base_document):
    """Factory writing the base run document, updated table by table, to TOML."""

    def write(updates: dict[str, dict[str, Any]] | None = None, name: str = "run.toml") -> Path:
        document = copy.deepcopy(base_document)
        for table, values in (updates or {}).items():
            document.setdefault(table, {}).update(values)
        path = tmp_path / name
        path.write_text(tomli_w.dumps(document), encoding="utf-8")
        return path

    return write


@pytest.fixture
def temp_config_dir(tmp_path, monkeypatch):
    """Point the user config file at a temporary directory."""
    config_dir = tmp_path / ".config" / "dwoltransport"
    config_dir.mkdir(parents=True)

    def mock_config_path():
        return str(config_dir / "config.toml")

    monkeypatch.setattr("dwoltransport.cli._config_path", mock_config_path)
    return config_dir
