"""Output files: CSV tables, JSON records, gnuplot scripts and wave-field dumps.

Every text artifact starts with ``#`` comment lines holding the package
version and the resolved run configuration as TOML, so each file can be
reproduced from its own header. See ``docs/output-schema.md``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import struct
from collections.abc import Iterable, Sequence
from pathlib import Path
from types import TracebackType
from typing import IO, Any

import numpy as np

from . import __version__
from .dynamics import Frame, GridSpec, WaveField
from .errors import DwolError

logger = logging.getLogger(__name__)

WAVEFIELD_MAGIC = b"DWWF"
WAVEFIELD_VERSION = 1
# magic, version, n_x, n_y, n_z, spacings, origins, frame tag
_HEADER = struct.Struct("<4sHIII3d3dB")


def header_lines(config_toml: str) -> list[str]:
    lines = [f"dwoltransport {__version__}", "resolved configuration:"]
    lines.extend(config_toml.rstrip("\n").splitlines())
    return [f"# {line}".rstrip() for line in lines]


def format_value(value: Any) -> str:
    """Shortest round-tripping text for floats; NaN stays NaN."""
    if isinstance(value, float | np.floating):
        return "nan" if math.isnan(value) else repr(float(value))
    return str(value)


class CsvWriter:
    """CSV table written and flushed row by row."""

    def __init__(self, path: Path, columns: Sequence[str], config_toml: str) -> None:
        self.path = path
        self.columns = list(columns)
        self._config_toml = config_toml
        self._file: IO[str] | None = None
        self._writer: Any = None

    def __enter__(self) -> CsvWriter:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file = open(self.path, "w", newline="", encoding="utf-8")  # noqa: SIM115
        for line in header_lines(self._config_toml):
            self._file.write(line + "\n")
        self._writer = csv.writer(self._file, lineterminator="\n")
        self._writer.writerow(self.columns)
        self._file.flush()
        return self

    def write_row(self, row: Sequence[Any]) -> None:
        if self._file is None:
            raise DwolError("CsvWriter used outside its context")
        if len(row) != len(self.columns):
            raise ValueError(
                f"row has {len(row)} values for {len(self.columns)} columns"
            )
        self._writer.writerow([format_value(v) for v in row])
        self._file.flush()

    def __exit__(
        self,
        exc_type: type[BaseException] | None,
        exc: BaseException | None,
        tb: TracebackType | None,
    ) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None


def write_csv(
    path: Path, columns: Sequence[str], rows: Iterable[Sequence[Any]], config_toml: str
) -> Path:
    with CsvWriter(path, columns, config_toml) as writer:
        for row in rows:
            writer.write_row(row)
    logger.debug(f"Wrote {path}")
    return path


def read_csv_rows(path: Path) -> tuple[list[str], list[list[str]]]:
    """Columns and data rows, skipping the ``#`` header."""
    with open(path, encoding="utf-8") as f:
        lines = [line for line in f if not line.startswith("#")]
    table = list(csv.reader(lines))
    return table[0], table[1:]


def _json_safe(value: Any) -> Any:
    """Non-finite floats become null."""
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, list | tuple):
        return [_json_safe(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_json(path: Path, record: dict[str, Any], config: dict[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = _json_safe({"version": __version__, "config": config, **record})
    text = json.dumps(payload, ensure_ascii=False, indent=2)
    path.write_text(text + "\n", encoding="utf-8")
    logger.debug(f"Wrote {path}")
    return path


def write_gnuplot(
    path: Path,
    data_file: str,
    columns: Sequence[str],
    x_column: str,
    y_columns: Sequence[str],
    config_toml: str,
) -> Path:
    """Script plotting each ``y_columns`` entry against ``x_column``."""
    index = {name: i + 1 for i, name in enumerate(columns)}
    plots = ", \\\n     ".join(
        f"'{data_file}' using {index[x_column]}:{index[y]} with linespoints title '{y}'"
        for y in y_columns
    )
    lines = [
        *header_lines(config_toml),
        "set datafile separator ','",
        "set key autotitle columnhead",
        f"set xlabel '{x_column}'",
        "set ylabel 'fidelity'",
        "set yrange [0:1.05]",
        "set grid",
        f"plot {plots}",
    ]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def dump_wavefield(path: Path, field: WaveField) -> Path:
    """Binary dump: fixed little-endian header then interleaved re/im, x fastest."""
    grid = field.grid
    counts = [*grid.shape, 1, 1][:3]
    spacings = [*grid.spacings, 0.0, 0.0][:3]
    origins = [*grid.origin, 0.0, 0.0][:3]
    header = _HEADER.pack(
        WAVEFIELD_MAGIC,
        WAVEFIELD_VERSION,
        *counts,
        *spacings,
        *origins,
        field.frame.code,
    )
    data = np.asarray(field.amplitudes.ravel(order="F"), dtype="<c16")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(header)
        f.write(data.tobytes())
    logger.debug(f"Wrote wave field {grid.shape} to {path}")
    return path


def load_wavefield(path: Path) -> WaveField:
    """Inverse of :func:`dump_wavefield`; the time stamp is not stored."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DwolError(f"{path}: truncated wave-field header")
    magic, version, nx, ny, nz, *rest = _HEADER.unpack_from(raw)
    if magic != WAVEFIELD_MAGIC:
        raise DwolError(f"{path}: not a wave-field dump")
    if version != WAVEFIELD_VERSION:
        raise DwolError(f"{path}: unsupported dump version {version}")
    spacings, origins, frame_code = rest[:3], rest[3:6], rest[6]
    ndim = sum(1 for n in (nx, ny, nz) if n > 1)
    shape = (nx, ny, nz)[:ndim]
    grid = GridSpec(
        tuple(shape),
        tuple(d * n for d, n in zip(spacings[:ndim], shape, strict=True)),
        tuple(origins[:ndim]),
    )
    values = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size)
    if values.size != math.prod(shape):
        raise DwolError(
            f"{path}: expected {math.prod(shape)} amplitudes, found {values.size}"
        )
    amplitudes = values.reshape(shape, order="F").astype(np.complex128)
    frame = Frame.LAB if frame_code == 0 else Frame.COMOVING
    return WaveField(amplitudes, grid, 0.0, frame)
