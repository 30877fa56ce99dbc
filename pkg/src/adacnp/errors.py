"""Exception hierarchy shared by every module."""


class AdaCNPError(Exception):
    """Base class for all package errors."""


class ContractError(AdaCNPError, ValueError):
    """A precondition of a public function was violated."""


class DimensionError(ContractError):
    """Array shapes do not agree."""


class DataError(AdaCNPError, ValueError):
    """Input data is malformed or inconsistent."""


class ParseError(DataError):
    """A row of an input file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(AdaCNPError, ArithmeticError):
    """A computation produced a non-finite or ill-conditioned result."""
