"""Small input-validation helpers raising :class:`ConfigError`."""

import math

from .errors import ConfigError


def check_finite(name, value):
    if value is None or not math.isfinite(value):
        raise ConfigError(name, f"must be a finite number, got {value!r}")
    return value


def check_positive(name, value, strict=True):
    check_finite(name, value)
    if value < 0 or (strict and value == 0):
        raise ConfigError(name, f"must be {'> 0' if strict else '>= 0'}, got {value!r}")
    return value


def check_range(name, value, lo, hi):
    check_finite(name, value)
    if not lo <= value <= hi:
        raise ConfigError(name, f"must lie in [{lo:g}, {hi:g}], got {value!r}")
    return value


def check_choice(name, value, choices):
    if value not in choices:
        raise ConfigError(name, f"must be one of {sorted(choices)}, got {value!r}")
    return value


def check_int(name, value, lo=None, hi=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(name, f"must be an integer, got {value!r}")
    if lo is not None and value < lo:
        raise ConfigError(name, f"must be >= {lo}, got {value}")
    if hi is not None and value > hi:
        raise ConfigError(name, f"must be <= {hi}, got {value}")
    return value
