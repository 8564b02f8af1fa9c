"""Exception types raised across the package."""


class NrIsacError(Exception):
    """Base class for all package errors."""


class ShapeError(NrIsacError, ValueError):
    """Input arrays or sequences have inconsistent dimensions."""


class DivisionDomainError(NrIsacError, ZeroDivisionError):
    """Element-wise division by a transmit grid that contains zeros."""


class DegenerateCovarianceError(NrIsacError, ValueError):
    """Sample covariance has lower rank than the requested model order."""


class NoTargetError(NrIsacError, LookupError):
    """No moving-target peak is available in a delay-Doppler map."""


class DegenerateGeometryError(NrIsacError, ValueError):
    """Kinematic state left the valid region (range must stay positive)."""


class ConditioningError(NrIsacError, ArithmeticError):
    """A matrix that must be inverted is singular or non-finite."""


class ConfigError(NrIsacError, ValueError):
    """A configuration file is missing, unreadable or holds invalid values."""
