"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ``ValidationError`` and
``ConfigurationError`` exit with 2, ``NumericFailure`` with 3.
"""


class EgoDanceError(Exception):
    """Base class for all package errors."""


class ValidationError(EgoDanceError, ValueError):
    """Input data violates a documented precondition."""


class ConfigurationError(EgoDanceError, ValueError):
    """Shapes, topologies or hyperparameters are mutually inconsistent."""


class NumericFailure(EgoDanceError, ArithmeticError):
    """A computation produced NaN or Inf."""

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where
