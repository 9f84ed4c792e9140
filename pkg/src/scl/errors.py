"""Exception hierarchy shared across the package."""


class SCLError(Exception):
    """Base class for all package errors."""


class ShapeError(SCLError, ValueError):
    pass


class ContractError(SCLError, ValueError):
    """A precondition of an operation was violated."""


class NumericError(SCLError, ArithmeticError):
    """Non-finite values or a solver that failed to converge."""


class FormatError(SCLError, ValueError):
    """Malformed input file."""
