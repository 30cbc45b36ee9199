"""Exception types raised by ppkcal."""

from numpy.linalg import LinAlgError


class CalibrationError(Exception):
    """Base class for calibration failures."""


class NotPSDError(CalibrationError, LinAlgError):
    """Raised when a matrix cannot be factorized even after jitter."""


class DegenerateGradientError(CalibrationError):
    """Raised when the parameter-gradient Gram matrix is singular at some theta."""


class ConfigError(CalibrationError, ValueError):
    """Invalid user configuration."""
