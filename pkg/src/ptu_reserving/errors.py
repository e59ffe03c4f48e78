"""Exception hierarchy.

Validation problems (bad shapes, bad values, missing data) derive from
``ValidationError``; numerical failures during fitting derive from
``NumericalError``. The CLI maps the two families to exit codes 1 and 2.
"""


class ReservingError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(ReservingError, ValueError):
    """Input data or configuration violates a structural requirement."""


class PositivityError(ValidationError):
    """An aggregate cumulative cell is zero or negative."""

    def __init__(self, accident_period, dev_period, value):
        self.accident_period = accident_period
        self.dev_period = dev_period
        self.value = value
        super().__init__(
            f"cell (i={accident_period}, j={dev_period}) must be strictly "
            f"positive, got {value!r}"
        )


class DimensionError(ValidationError):
    """Array lengths or feature dimensions do not match."""


class InsufficientDataError(ValidationError):
    """Not enough observations to estimate the requested quantity."""


class UnavailableError(ValidationError):
    """The full development square is required but absent."""


class CohortExhaustedError(ValidationError):
    """A recursion step has an empty or zero-volume claims cohort."""

    def __init__(self, accident_period, dev_period, detail="empty cohort"):
        self.accident_period = accident_period
        self.dev_period = dev_period
        super().__init__(
            f"cohort exhausted at accident period {accident_period}, "
            f"dev period {dev_period}: {detail}"
        )


class DegenerateFeatureError(ValidationError):
    """A feature has zero variance and cannot be standardized."""


class NumericalError(ReservingError, ArithmeticError):
    """A numerical procedure failed."""


class DivergenceError(NumericalError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, loss):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")


class RecursionOrderError(NumericalError):
    """A recursion step was attempted before its inputs were available."""


class ReproducibilityError(NumericalError):
    """A replayed run did not reproduce its recorded outputs."""
