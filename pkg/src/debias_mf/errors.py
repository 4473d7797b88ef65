"""Exception types shared across the package."""


class DebiasMFError(Exception):
    """Base class for package errors."""


class DataError(DebiasMFError):
    """Malformed input data or a violated data contract (CLI exit code 2)."""


class NumericalError(DebiasMFError):
    """Numerical failure: divergence or a singular system (CLI exit code 3)."""
