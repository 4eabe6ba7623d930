"""Exception hierarchy shared by every module."""


class IvlidError(Exception):
    """Base class for all package errors."""


class ParseError(IvlidError, ValueError):
    """Malformed input file."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        prefix = ""
        if path is not None:
            prefix = f"{path}:"
        if line is not None:
            prefix += f"line {line}: "
        elif prefix:
            prefix += " "
        super().__init__(prefix + message)


class DimensionError(IvlidError, ValueError):
    """Vector or matrix dimension mismatch."""


class DomainError(IvlidError, ValueError):
    """Argument outside the valid domain of an operation."""


class NumericError(IvlidError, ArithmeticError):
    """Non-finite values or a numerically degenerate fit."""


class DivergenceError(NumericError):
    """Training produced a non-finite loss."""
