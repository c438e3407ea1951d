"""Exception types raised by the localization package."""


class LocalizationError(Exception):
    """Base class for all package errors."""


class InvalidInputError(LocalizationError, ValueError):
    """Malformed or out-of-range input (dimension mismatch, bad variance, ...)."""


class SingularGeometryError(LocalizationError):
    """Target coincides with an antenna, so a distance used as a divisor is zero."""


class DegenerateGeometryError(LocalizationError):
    """Fisher information is singular for the given geometry."""


class NotFoundError(LocalizationError, KeyError):
    """Unknown scenario name, method name, or similar lookup failure."""

    def __str__(self):
        # KeyError quotes its argument; keep plain messages readable.
        return str(self.args[0]) if self.args else ""
