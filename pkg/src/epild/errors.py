"""Exception types raised across the package."""


class EpildError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(EpildError, ValueError):
    pass


class DomainError(EpildError, ValueError):
    """A state lies outside the model domain."""


class NoEndemicEquilibriumError(EpildError, ValueError):
    pass


class SnapError(EpildError, ValueError):
    pass


class PreconditionError(EpildError, ValueError):
    pass


class ModelError(EpildError, RuntimeError):
    """A rate evaluator returned something unusable (negative or non-finite)."""


class IntegrationEscapeError(EpildError, RuntimeError):
    pass


class NumericalFailureError(EpildError, RuntimeError):
    """An iterative solver did not converge.

    ``last_iterate`` carries the final iterate for diagnostics.
    """

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class InfeasiblePathError(EpildError, RuntimeError):
    pass
