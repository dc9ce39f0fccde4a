"""Exception hierarchy shared by every module."""


class RuotError(Exception):
    """Base class for all library errors."""


class ConfigError(RuotError, ValueError):
    """Invalid configuration or hyperparameter value."""


class ShapeError(RuotError, ValueError):
    """Array dimensions do not agree."""


class UsageError(RuotError, ValueError):
    """A precondition on the inputs of an operation is violated."""


class DomainError(RuotError, ValueError):
    """Argument outside the domain of a mathematical function."""


class NumericError(RuotError, ArithmeticError):
    """A non-finite value appeared during a computation."""


class FormatError(RuotError, ValueError):
    """A file could not be decoded (corrupt, truncated or wrong version)."""


class ParseError(FormatError):
    """A text file does not match its schema; carries the offending line."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
