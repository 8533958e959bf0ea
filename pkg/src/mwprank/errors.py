"""Exception types shared across the package."""


class MwpRankError(Exception):
    """Base class for all package errors."""


class ExpressionSyntaxError(MwpRankError, ValueError):
    """Raised when an infix token sequence cannot be parsed."""


class MissingNumberError(MwpRankError, KeyError):
    """Raised when evaluation hits a NUM token absent from the number table."""


class NoAlternativeError(MwpRankError):
    """Raised when an edit/expand disturbance has no legal replacement."""


class TooSmallError(MwpRankError):
    """Raised when a disturbance needs more tree structure than available."""


class EmptyBankError(MwpRankError):
    """Raised when sampling from an expression bank with no entries."""


class FormatError(MwpRankError, ValueError):
    """Raised on malformed dataset records; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ParseError(MwpRankError, ValueError):
    """Raised when a dataset equation does not parse."""


class DimensionMismatchError(MwpRankError, ValueError):
    """Raised on out-of-range token indices or incompatible array shapes."""


class NonFiniteError(MwpRankError, ArithmeticError):
    """Raised when a loss or gradient stops being finite."""


class NoCandidateError(MwpRankError):
    """Raised when every beam candidate for a problem is unparseable."""


class CheckpointError(MwpRankError, ValueError):
    """Raised when a checkpoint file is corrupt or incompatible."""
