"""Exception hierarchy shared by all calibration modules."""


class CalibError(Exception):
    """Base class for every error raised by cgpcal."""


class ValidationError(CalibError, ValueError):
    """Bad input: wrong shapes, invalid configuration, malformed files."""


class DimensionError(ValidationError):
    pass


class InsufficientDataError(ValidationError):
    pass


class NumericalError(CalibError, ArithmeticError):
    """A numerical procedure could not produce a trustworthy result."""


class SingularMatrixError(NumericalError):
    pass


class RankDeficientError(NumericalError):
    def __init__(self, message, null_direction=None):
        super().__init__(message)
        self.null_direction = null_direction


class HyperparameterWarning(UserWarning):
    """Hyperparameter search did not improve on its initialization."""
