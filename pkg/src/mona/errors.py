"""Exception hierarchy.

Input problems derive from :class:`ValidationError`, numerical breakdowns
from :class:`NumericalError`. The CLI maps the two families to exit codes
2 and 4.
"""


class MonaError(Exception):
    pass


class ValidationError(MonaError, ValueError):
    pass


class NumericalError(MonaError, ArithmeticError):
    pass


class NonPositiveDepthError(ValidationError):
    pass


class DegenerateSceneError(ValidationError):
    pass


class LastFrameError(ValidationError, IndexError):
    pass


class InvalidGridError(ValidationError):
    pass


class NonPositiveLambdaError(ValidationError):
    pass


class NotPositiveDefiniteError(NumericalError):
    pass


class TooFewVisibleError(ValidationError):
    pass


class InsufficientAnchorsError(ValidationError):
    pass


class EmptySampleSetError(ValidationError):
    pass


class ZeroUnitAreaError(ValidationError):
    pass


class DegenerateConfigurationError(NumericalError):
    pass


class InsufficientOverlapError(ValidationError):
    pass


class TooFewObservationsError(ValidationError):
    pass


class SolverDivergedError(NumericalError):
    pass


class SchemaError(ValidationError):
    """Malformed or out-of-range input file / config content.

    ``where`` names the offending field or record so diagnostics can point at it.
    """

    def __init__(self, message: str, where: str | None = None):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)
