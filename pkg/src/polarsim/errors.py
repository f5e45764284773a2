"""Exception types raised across the package."""


class PolarsimError(Exception):
    """Base class for all package errors."""


class ZeroVector(PolarsimError, ValueError):
    """Projection onto the sphere was asked for a (numerically) zero vector."""

    def __init__(self, message="vector norm below 1e-12; projection undefined", step=None):
        if step is not None:
            message = f"{message} (at step {step})"
        super().__init__(message)
        self.step = step


class DimensionMismatch(PolarsimError, ValueError):
    pass


class ExactTooLarge(PolarsimError, ValueError):
    pass


class DegenerateInput(PolarsimError, ValueError):
    pass


class InvalidLambda(PolarsimError, ValueError):
    pass


class InvalidDistribution(PolarsimError, ValueError):
    pass


class RejectionStall(PolarsimError, RuntimeError):
    pass


class EmptySeries(PolarsimError, ValueError):
    pass


class TimeNotRecorded(PolarsimError, KeyError):
    pass


class NonPositiveValue(PolarsimError, ValueError):
    pass


class ConfigInvalid(PolarsimError, ValueError):
    """Experiment configuration failed validation; ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
