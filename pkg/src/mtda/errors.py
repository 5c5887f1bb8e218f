"""Error taxonomy shared across the package.

Exit-code mapping in the CLI: ContractError / ShapeError / NumericError -> 1,
OS-level failures -> 2.
"""


class ShapeError(ValueError):
    """Operand dimensions are incompatible with an operation's contract."""

    def __init__(self, message, *dims):
        if dims:
            message = f"{message}: " + " vs ".join(str(list(d)) for d in dims)
        super().__init__(message)


class ContractError(ValueError):
    """An operation precondition was violated by otherwise well-shaped data."""


class NumericError(ArithmeticError):
    """A computation produced NaN/Inf where finite values are required."""
