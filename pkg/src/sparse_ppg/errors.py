"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value. ``field`` names the offending parameter."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class BoundsError(ValueError):
    """A requested time window falls outside the available data."""


class TraceParseError(ValueError):
    """Malformed trace file. ``line`` is 1-based (header is line 1) when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TraceFormatError(TraceParseError):
    """Structurally valid file whose contents break the trace contract."""


class StateError(RuntimeError):
    """Operation not allowed in the current state-machine mode."""


class NumericalError(RuntimeError):
    """Numerical procedure failed to converge."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(f"{message} {self.diagnostics}" if diagnostics else message)


class SingularityError(ArithmeticError):
    """Formula evaluated at (or numerically at) a pole."""


class AccountingError(ValueError):
    """Acquisition log does not cover the accounting interval."""
