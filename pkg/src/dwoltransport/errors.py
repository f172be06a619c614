"""Exception hierarchy for dwoltransport.

The CLI maps :class:`ConfigError` to exit code 2 and every other
:class:`DwolError` to exit code 1.
"""

from __future__ import annotations


class DwolError(Exception):
    """Base class for all dwoltransport errors."""


class ConfigError(DwolError):
    """Invalid run configuration; ``field`` names the dotted TOML path."""

    def __init__(self, message: str, field: str | None = None) -> None:
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class NumericalError(DwolError):
    """A computation could not produce a trustworthy result."""


class NonConfiningError(NumericalError):
    """A squared harmonic frequency is not positive (inverted well)."""


class AxisMismatchError(NumericalError):
    """A trajectory was designed for a different frequency or provenance."""


class IndexTooLargeError(NumericalError):
    """A Hermite index exceeds the configured cap."""


class QuadratureFailureError(NumericalError):
    """Adaptive quadrature did not reach the requested tolerance."""


class SingularSystemError(NumericalError):
    """The correction-basis interpolation system cannot be solved."""


class DegenerateCorrectionError(NumericalError):
    """The eSTA gradient sum vanishes while the G_n sum does not."""


class FrameMismatchError(NumericalError):
    """A wave field carries the wrong frame tag for the operation."""


class NonFiniteAmplitudeError(NumericalError):
    """A propagation step produced NaN or infinite amplitudes."""


class StepUnderflowError(NumericalError):
    """Adaptive time stepping shrank the step below its lower bound."""


class NoConvergenceError(NumericalError):
    """Imaginary-time evolution hit its iteration cap."""


class GridMismatchError(NumericalError):
    """Two wave fields live on different grids or the grid lacks an axis."""


class BoundaryContaminationError(NumericalError):
    """Amplitude reached the window boundary during propagation."""
