"""
Exception hierarchy for the G-expectation desk.

Each category maps to one CLI exit status.
"""


class GDeskError(Exception):
    """Base class for all library errors."""
    exit_code = 1


class ConfigurationError(GDeskError):
    """Raised for invalid inputs: bad bands, unstable grids, empty families."""
    exit_code = 2


class AuditError(GDeskError):
    """Raised when an invariant or audit check fails beyond its tolerance."""
    exit_code = 3


class NumericalError(GDeskError):
    """Raised when a solve produces non-finite values or a degenerate regression."""
    exit_code = 4

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step
