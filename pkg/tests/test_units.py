"""Tests for unit-tagged quantities."""

from __future__ import annotations

import math

import pytest
from scipy import constants

from dwoltransport.errors import ConfigError
from dwoltransport.units import (
    Dimension,
    Quantity,
    Scales,
    angle_to_rad,
    parse_quantity,
    si_base,
)


@pytest.fixture
def scales():
    """Scales with round numbers and no SI base."""
    return Scales(e_r=0.5, l_x=0.1, l_y=0.2, l_z=0.4, t_x=3.0, t_y=4.0)


class TestParseQuantity:
    """Test parsing of '<number> <unit>' strings."""

    def test_value_and_unit(self):
        """Test a plain quantity is split into value and unit."""
        q = parse_quantity("1500 E_R", Dimension.ENERGY, "lattice.u_d0")
        assert q == Quantity(1500.0, "E_R")

    def test_exponent_and_sign(self):
        """Test scientific notation and signs are accepted."""
        q = parse_quantity("-2.5e-3 m", Dimension.LENGTH, "grid.center[0]")
        assert q.value == -2.5e-3
        assert q.unit == "m"

    def test_bare_number_rejected(self):
        """Test numbers without a unit tag name the field."""
        with pytest.raises(ConfigError, match="transport.t_f"):
            parse_quantity(3.0, Dimension.TIME, "transport.t_f")

    def test_unknown_unit(self):
        """Test unknown units are rejected."""
        with pytest.raises(ConfigError, match="unknown unit 'furlong'"):
            parse_quantity("3 furlong", Dimension.LENGTH, "transport.distance")

    def test_wrong_dimension(self):
        """Test a time unit is rejected for a length."""
        with pytest.raises(ConfigError, match="expected a length"):
            parse_quantity("3 T_x", Dimension.LENGTH, "transport.distance")

    def test_garbage(self):
        """Test unparsable text is rejected."""
        with pytest.raises(ConfigError, match="cannot parse"):
            parse_quantity("three l_x", Dimension.LENGTH, "transport.distance")


class TestAngles:
    """Test angle conversion."""

    @pytest.mark.parametrize(
        ("raw", "expected"),
        [("0.5 pi", math.pi / 2), ("90 deg", math.pi / 2), ("1.25 rad", 1.25)],
    )
    def test_angle_units(self, raw, expected):
        """Test pi, deg and rad give the same radians."""
        q = parse_quantity(raw, Dimension.ANGLE, "lattice.beta")
        assert angle_to_rad(q) == pytest.approx(expected)


class TestScales:
    """Test conversion to internal units."""

    def test_harmonic_units(self, scales):
        """Test l_x, l_y and T_x scale by their harmonic values."""
        assert scales.to_internal(Quantity(10, "l_x"), "f") == pytest.approx(1.0)
        assert scales.to_internal(Quantity(10, "l_y"), "f") == pytest.approx(2.0)
        assert scales.to_internal(Quantity(2, "T_x"), "f") == pytest.approx(6.0)

    def test_recoil_energy(self, scales):
        """Test E_R is one half in internal units."""
        assert scales.to_internal(Quantity(1500, "E_R"), "f") == pytest.approx(750.0)

    def test_lattice_lengths(self, scales):
        """Test 1/k_L, lambda_L and cell lengths."""
        assert scales.to_internal(Quantity(3, "1/k_L"), "f") == 3.0
        assert scales.to_internal(Quantity(1, "lambda_L"), "f") == pytest.approx(2 * math.pi)
        assert scales.to_internal(Quantity(1, "cell"), "f") == pytest.approx(2 * math.pi)

    def test_l_r_defaults_to_l_x(self, scales):
        """Test l_r falls back to l_x until it is configured."""
        assert scales.to_internal(Quantity(1, "l_r"), "f") == pytest.approx(0.1)

    def test_si_without_base(self, scales):
        """Test SI units need an SI base."""
        with pytest.raises(ConfigError, match="SI unit 'um'"):
            scales.to_internal(Quantity(1, "um"), "transport.distance")


class TestSIBase:
    """Test the SI base of the internal unit system."""

    def test_internal_input_has_no_base(self):
        """Test '1 k_L' and '1 m_atom' give no SI base."""
        assert si_base(Quantity(1, "k_L"), Quantity(1, "m_atom"), "lattice.k_L") is None

    def test_mixed_input_rejected(self):
        """Test SI k_L with an internal mass is rejected."""
        with pytest.raises(ConfigError, match="both be SI"):
            si_base(Quantity(1e7, "1/m"), Quantity(1, "m_atom"), "lattice.k_L")

    def test_non_unit_internal_rejected(self):
        """Test internal k_L other than 1 is rejected."""
        with pytest.raises(ConfigError, match="must\\s+be '1 k_L'"):
            si_base(Quantity(2, "k_L"), Quantity(1, "m_atom"), "lattice.k_L")

    def test_recoil_energy_in_joules(self):
        """Test E_R = ħ²k²/2m for rubidium-like numbers."""
        k = 2 * math.pi / 800e-9
        base = si_base(Quantity(k, "1/m"), Quantity(87, "amu"), "lattice.k_L")
        assert base is not None
        mass = 87 * constants.atomic_mass
        expected = constants.hbar**2 * k**2 / (2 * mass)
        assert 0.5 * base.energy_j == pytest.approx(expected, rel=1e-12)

    def test_micrometres(self):
        """Test um converts through the SI length unit."""
        base = si_base(Quantity(1e6, "1/m"), Quantity(1, "kg"), "lattice.k_L")
        scales = Scales(e_r=0.5, l_x=1, l_y=1, l_z=1, t_x=1, t_y=1, si=base)
        assert scales.to_internal(Quantity(2, "um"), "f") == pytest.approx(2.0)
