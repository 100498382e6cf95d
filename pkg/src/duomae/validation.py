"""Input validation helpers used by the estimators and the config layer."""

from __future__ import annotations

from .errors import ConfigurationError


def check_open_unit(name: str, value: float) -> float:
    """Require value strictly inside (0, 1)."""
    if not (0.0 < value < 1.0):
        raise ConfigurationError(f"{name} must lie in (0, 1), got {value!r}")
    return float(value)


def check_closed_unit(name: str, value: float) -> float:
    """Require value inside [0, 1]."""
    if not (0.0 <= value <= 1.0):
        raise ConfigurationError(f"{name} must lie in [0, 1], got {value!r}")
    return float(value)


def check_positive(name: str, value: float) -> float:
    if not value > 0:
        raise ConfigurationError(f"{name} must be positive, got {value!r}")
    return value


def check_nonnegative_int(name: str, value: int) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < 0:
        raise ConfigurationError(f"{name} must be a nonnegative integer, got {value!r}")
    return value


def check_choice(name: str, value: str, options: tuple[str, ...]) -> str:
    if value not in options:
        raise ConfigurationError(f"{name} must be one of {options}, got {value!r}")
    return value
