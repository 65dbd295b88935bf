"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation (e.g. depth <= 0)."""


class ShapeError(ValueError):
    """Array shapes are incompatible or too small."""


class ConfigError(ValueError):
    """A camera, solver, loss or manifest configuration is invalid."""


class EvaluationError(ValueError):
    """Metrics cannot be computed (e.g. empty validity mask)."""


class SolverFault(RuntimeError):
    """A solver step produced a non-finite gradient.

    ``term`` names the loss term and ``pixel`` is the (row, col) of the first
    offending entry.
    """

    def __init__(self, message, term=None, pixel=None):
        super().__init__(message)
        self.term = term
        self.pixel = pixel
