"""Sensor motion-model calibration for wheeled robots from encoder ticks."""
from .errors import (CalibError, DimensionError, InsufficientDataError, NumericalError,
                     RankDeficientError, SingularMatrixError, ValidationError)
from .pose import Pose2D, ominus, oplus, relative_pose

__version__ = "0.1.0"
