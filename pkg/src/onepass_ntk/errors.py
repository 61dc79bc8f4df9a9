"""Exception hierarchy shared by all modules."""


class OnePassError(Exception):
    """Base class for package errors."""


class DimensionError(OnePassError, ValueError):
    pass


class DomainError(OnePassError, ValueError):
    pass


class DegenerateStateError(OnePassError, ValueError):
    pass


class TargetLookupError(OnePassError, KeyError):
    pass


class FormatError(OnePassError, ValueError):
    """Malformed binary input; ``offset`` is the byte position that failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TruncationError(OnePassError, ArithmeticError):
    """A series did not converge within its term cap."""

    def __init__(self, message, partial_sum=None, last_term=None):
        super().__init__(message)
        self.partial_sum = partial_sum
        self.last_term = last_term


class NumericalError(OnePassError, ArithmeticError):
    pass


class UsageError(OnePassError, ValueError):
    pass


class AggregationError(OnePassError, ValueError):
    pass


class ConfigError(OnePassError, ValueError):
    pass


class InvariantViolation(OnePassError, AssertionError):
    """Raised by audits; ``record`` carries the forensic details."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record or {}


class TruncationWarning(UserWarning):
    pass


class PreconditionError(OnePassError, ValueError):
    pass
