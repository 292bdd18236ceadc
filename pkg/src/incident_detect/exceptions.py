"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes, so new error types should subclass one
of the groups below rather than ``Exception`` directly.
"""


class IncidentDetectError(Exception):
    """Base class for all package errors."""


class DimensionError(IncidentDetectError, ValueError):
    """Tensor or matrix shapes are incompatible."""


class PreconditionError(IncidentDetectError, ValueError):
    """An operation was called in a state it does not support."""


class NumericDomainError(IncidentDetectError, ValueError):
    """A value lies outside the mathematical domain of an operation."""


class NonFiniteError(IncidentDetectError, FloatingPointError):
    """An operation produced NaN or Inf."""


class InputError(IncidentDetectError, ValueError):
    """Malformed user data (CSV cells, labels, empty inputs)."""


class ConfigurationError(IncidentDetectError, ValueError):
    """Invalid hyperparameters or experiment configuration."""


class UndefinedMetricError(IncidentDetectError, ZeroDivisionError):
    """A metric's denominator is zero for the given counts."""


class TrainingDivergenceError(IncidentDetectError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
