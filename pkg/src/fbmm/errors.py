"""Exception types shared across the package."""


class FbmmError(Exception):
    """Base class for all package-specific errors."""


class UnsupportedOperatorError(FbmmError):
    """An operation was requested on an atom kind that cannot provide it."""


class DomainViolationError(FbmmError):
    """A point lies outside the domain required by the operation."""


class MissingRepresentationError(FbmmError):
    """The model lacks the zero witness / selection vectors the diagnostic needs."""


class NoConvergenceError(FbmmError):
    """An iterative solver hit its iteration cap.

    Carries the last residual so callers can report how far the solve got.
    """

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class NumericalFailureError(FbmmError):
    """A chain produced a non-finite iterate.

    ``partial`` holds whatever trajectory prefix was computed, ``step_index``
    the first failing step.
    """

    def __init__(self, message, partial=None, step_index=None):
        super().__init__(message)
        self.partial = partial
        self.step_index = step_index


class ScenarioValidationError(FbmmError):
    """A scenario config failed validation; ``path`` points at the bad field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class InconclusiveError(FbmmError):
    """An estimator could not produce a value from the samples it was given."""
