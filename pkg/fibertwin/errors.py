"""Exception hierarchy shared by the simulation, analysis and CLI layers."""

from typing import Optional


class TwinError(Exception):
    """Base class for every error raised by fibertwin."""


class DomainError(TwinError, ValueError):
    """Input outside the domain of a formula or operation."""


class ConfigError(TwinError, ValueError):
    """Configuration file could not be parsed or validated."""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None) -> None:
        self.key = key
        self.line = line
        location = []
        if line is not None:
            location.append(f"line {line}")
        if key:
            location.append(f"key '{key}'")
        prefix = f"{', '.join(location)}: " if location else ""
        super().__init__(f"{prefix}{message}")


class FormatError(TwinError, ValueError):
    """Data file is malformed."""

    def __init__(self, message: str, row: Optional[int] = None) -> None:
        self.row = row
        prefix = f"row {row}: " if row is not None else ""
        super().__init__(f"{prefix}{message}")


class CalibrationError(TwinError):
    """Counts cannot be calibrated to phase."""


class SimulationError(TwinError, RuntimeError):
    """Simulation diverged or violated an internal invariant."""


class FitError(TwinError, ValueError):
    """Power-law fit preconditions not met."""
