"""Exception types raised by the library."""


class EvtriggerError(Exception):
    """Base class for all library errors."""


class CovarianceNotPSDError(EvtriggerError, ValueError):
    """A covariance matrix could not be factorized even after jitter."""


class ConfigurationError(EvtriggerError, ValueError):
    """Inconsistent model, trigger or scenario configuration."""


class ConvergenceError(EvtriggerError, RuntimeError):
    """An iterative solver hit its iteration cap.

    ``residual`` holds the last relative change.
    """

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class NumericalError(EvtriggerError, ArithmeticError):
    """A matrix that must be invertible was singular."""


class SamplingStarvationError(EvtriggerError, RuntimeError):
    """Rejection sampling did not collect enough samples within ``max_batches``."""

    def __init__(self, message, accepted=0, batches=0):
        super().__init__(message)
        self.accepted = accepted
        self.batches = batches
        self.scenario = None


class GridTooSmallError(EvtriggerError, ValueError):
    """The quadrature grid truncates non-negligible posterior mass."""


class UndefinedMetricError(EvtriggerError, ValueError):
    """A metric is undefined for the supplied records."""
