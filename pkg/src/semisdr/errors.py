"""Exception types raised across the package."""

from __future__ import annotations


class SDRError(Exception):
    """Base class for package errors."""


class DimensionError(SDRError, ValueError):
    pass


class RankError(SDRError, ValueError):
    pass


class PivotError(SDRError, ValueError):
    pass


class DegenerateDesignError(SDRError, ValueError):
    """Covariate design whose covariance cannot be inverted."""

    def __init__(self, message, eigenvalue=None, direction=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue
        self.direction = direction


class SingularMatrixError(SDRError, ArithmeticError):
    def __init__(self, message, condition_number=None):
        super().__init__(message)
        self.condition_number = condition_number


class ScoreEvaluationError(SDRError, ValueError):
    pass


class UnsupportedError(SDRError, NotImplementedError):
    pass
