"""
Error types: numerical and configuration failures.
Every failure the library signals derives from CosseratError.
"""


class CosseratError(Exception):
    """Base class for all library errors."""


class SingularParameterization(CosseratError):
    """The rotation vector sits on (or next to) the singular set |p| = 2*pi*k."""


class GridTooSmall(CosseratError):
    """Fewer than three samples along a differenced axis."""


class InconsistentFields(CosseratError):
    """Kinematic fields violate the compatibility conditions."""


class NumericalBlowup(CosseratError):
    """A stepped field became non-finite or exceeded the blowup threshold."""


class NoStableStep(CosseratError):
    """Even the smallest time step of a search range is unstable."""


class NoConvergence(CosseratError):
    """An iterative solve hit its iteration limit above tolerance."""


class EmptyTrace(CosseratError):
    """Metrics or plots were requested for a trace without frames."""


class TraceIOError(CosseratError):
    """An output file could not be written or read."""


class ConfigParseError(CosseratError):
    """A configuration line is malformed."""

    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class ConfigValidationError(CosseratError):
    """A configuration value violates its constraint."""

    def __init__(self, key: str, constraint: str):
        self.key = key
        self.constraint = constraint
        super().__init__(f"{key}: {constraint}")
