"""Exception hierarchy shared across the package."""


class ChargePlanError(Exception):
    """Base class for all package-specific errors."""


class NetworkParseError(ChargePlanError):
    """Raised when a network or scenario file cannot be parsed.

    Carries the offending line number when available.
    """

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class ValidationError(ChargePlanError):
    """Raised when parsed data violates a model invariant."""


class NoRouteError(ChargePlanError):
    """Raised when an O-D pair has no route in the network."""


class InfeasibleError(ChargePlanError):
    """Raised when a planning problem has no feasible solution."""
