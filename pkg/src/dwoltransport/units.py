"""Unit-tagged quantities and the internal unit system.

Internally ħ = 1. Input given in SI is rescaled once so that the lattice
wave number k_L and the atomic mass m both equal 1; input given in recoil
units already satisfies that. Lengths and times tagged with harmonic scales
(``l_x``, ``T_x`` ...) need the lattice's harmonic model and are resolved
through :class:`Scales`.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum

from scipy import constants

from .errors import ConfigError

HBAR = 1.0


class Dimension(str, Enum):
    ENERGY = "energy"
    LENGTH = "length"
    TIME = "time"
    ANGLE = "angle"
    WAVENUMBER = "wave number"
    MASS = "mass"


UNIT_DIMENSIONS: dict[str, Dimension] = {
    "E_R": Dimension.ENERGY,
    "J": Dimension.ENERGY,
    "l_x": Dimension.LENGTH,
    "l_y": Dimension.LENGTH,
    "l_z": Dimension.LENGTH,
    "l_r": Dimension.LENGTH,
    "1/k_L": Dimension.LENGTH,
    "lambda_L": Dimension.LENGTH,
    "cell": Dimension.LENGTH,
    "m": Dimension.LENGTH,
    "mm": Dimension.LENGTH,
    "um": Dimension.LENGTH,
    "nm": Dimension.LENGTH,
    "T_x": Dimension.TIME,
    "T_y": Dimension.TIME,
    "s": Dimension.TIME,
    "ms": Dimension.TIME,
    "us": Dimension.TIME,
    "rad": Dimension.ANGLE,
    "deg": Dimension.ANGLE,
    "pi": Dimension.ANGLE,
    "k_L": Dimension.WAVENUMBER,
    "1/m": Dimension.WAVENUMBER,
    "m_atom": Dimension.MASS,
    "kg": Dimension.MASS,
    "amu": Dimension.MASS,
}

SI_UNITS = {"J", "m", "mm", "um", "nm", "s", "ms", "us", "1/m", "kg", "amu"}

_SI_LENGTH = {"m": 1.0, "mm": 1e-3, "um": 1e-6, "nm": 1e-9}
_SI_TIME = {"s": 1.0, "ms": 1e-3, "us": 1e-6}

_NUMBER = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_QUANTITY_RE = re.compile(rf"^\s*({_NUMBER})\s*(\S+)\s*$")


@dataclass(frozen=True)
class Quantity:
    value: float
    unit: str

    @property
    def dimension(self) -> Dimension:
        return UNIT_DIMENSIONS[self.unit]

    def __str__(self) -> str:
        return f"{self.value:g} {self.unit}"


def parse_quantity(raw: object, dimension: Dimension, field: str) -> Quantity:
    """Parse ``"<number> <unit>"`` and check the unit's dimension."""
    if isinstance(raw, bool) or not isinstance(raw, str):
        raise ConfigError(
            f"expected a quantity string like '1.0 <unit>' ({dimension.value}), "
            f"got {raw!r}",
            field,
        )
    match = _QUANTITY_RE.match(raw)
    if match is None:
        raise ConfigError(f"cannot parse quantity {raw!r}", field)
    value, unit = float(match.group(1)), match.group(2)
    if unit not in UNIT_DIMENSIONS:
        raise ConfigError(f"unknown unit {unit!r}", field)
    if UNIT_DIMENSIONS[unit] is not dimension:
        raise ConfigError(
            f"unit {unit!r} is a {UNIT_DIMENSIONS[unit].value}, "
            f"expected a {dimension.value}",
            field,
        )
    return Quantity(value, unit)


def angle_to_rad(q: Quantity) -> float:
    if q.unit == "rad":
        return q.value
    if q.unit == "deg":
        return math.radians(q.value)
    return q.value * math.pi


@dataclass(frozen=True)
class SIBase:
    """SI values of the internal length and mass units (1/k_L and m)."""

    length_m: float
    mass_kg: float

    @property
    def time_s(self) -> float:
        return self.mass_kg * self.length_m**2 / constants.hbar

    @property
    def energy_j(self) -> float:
        return constants.hbar**2 / (self.mass_kg * self.length_m**2)


def si_base(k_l: Quantity, mass: Quantity, field: str) -> SIBase | None:
    """Return the SI base when k_L and m are given in SI, else ``None``."""
    k_si = k_l.unit == "1/m"
    m_si = mass.unit in {"kg", "amu"}
    if k_si != m_si:
        raise ConfigError("k_L and mass must both be SI or both be internal", field)
    if not k_si:
        if k_l.value != 1.0 or mass.value != 1.0:
            raise ConfigError(
                "without SI input k_L and mass define the unit system and must "
                "be '1 k_L' and '1 m_atom'",
                field,
            )
        return None
    mass_kg = mass.value * constants.atomic_mass if mass.unit == "amu" else mass.value
    return SIBase(length_m=1.0 / k_l.value, mass_kg=mass_kg)


@dataclass(frozen=True)
class Scales:
    """Conversion factors from tagged units to internal units."""

    e_r: float
    l_x: float
    l_y: float
    l_z: float
    t_x: float
    t_y: float
    k_l: float = 1.0
    l_r: float | None = None
    si: SIBase | None = None

    def to_internal(self, q: Quantity, field: str) -> float:
        unit = q.unit
        if unit in SI_UNITS and self.si is None:
            raise ConfigError(
                f"SI unit {unit!r} needs k_L in 1/m and mass in kg or amu", field
            )
        factor: float
        if unit == "E_R":
            factor = self.e_r
        elif unit == "J":
            assert self.si is not None
            factor = 1.0 / self.si.energy_j
        elif unit in {"l_x", "l_y", "l_z"}:
            factor = {"l_x": self.l_x, "l_y": self.l_y, "l_z": self.l_z}[unit]
        elif unit == "l_r":
            factor = self.l_r if self.l_r is not None else self.l_x
        elif unit == "1/k_L":
            factor = 1.0 / self.k_l
        elif unit == "lambda_L":
            factor = 2.0 * math.pi / self.k_l
        elif unit == "cell":
            factor = 2.0 * math.pi / self.k_l
        elif unit in _SI_LENGTH:
            assert self.si is not None
            factor = _SI_LENGTH[unit] / self.si.length_m
        elif unit == "T_x":
            factor = self.t_x
        elif unit == "T_y":
            factor = self.t_y
        elif unit in _SI_TIME:
            assert self.si is not None
            factor = _SI_TIME[unit] / self.si.time_s
        elif unit == "k_L":
            factor = self.k_l
        elif unit == "1/m":
            assert self.si is not None
            factor = self.si.length_m
        else:
            raise ConfigError(f"unit {unit!r} cannot be converted here", field)
        return q.value * factor
