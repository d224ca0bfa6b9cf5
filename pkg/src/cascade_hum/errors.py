"""Exception hierarchy."""


class CascadeError(Exception):
    """Base class for all package errors."""


class InvalidArgument(CascadeError, ValueError):
    pass


class InvalidCoefficient(CascadeError, ValueError):
    pass


class InvalidState(CascadeError, ValueError):
    pass


class InvalidConfig(CascadeError, ValueError):
    """Config or JSON document does not match the schema."""


class HypothesisViolation(CascadeError):
    """A structural hypothesis on the couplings fails (tagged ``A2``/``A3``)."""

    def __init__(self, hypothesis, message):
        super().__init__(f"({hypothesis}) {message}")
        self.hypothesis = hypothesis


class StepTooLarge(CascadeError, ValueError):
    pass


class GridMismatch(CascadeError, ValueError):
    pass


class UndefinedRatio(CascadeError, ValueError):
    pass


class SpaceViolation(CascadeError, ValueError):
    pass


class TooLarge(CascadeError, ValueError):
    pass


class CannotEvaluate(CascadeError, ValueError):
    pass


class Unsupported(CascadeError, ValueError):
    pass


class NotControllable(CascadeError):
    """HUM could not steer the system at this horizon.

    ``solution`` carries the partial :class:`~cascade_hum.hum.HumSolution`
    when one was produced, so callers can still report it.
    """

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution
