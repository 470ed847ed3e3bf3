"""Exception types raised across the package."""


class InvalidArgumentError(ValueError):
    pass


class ParseError(ValueError):
    """Raised when a CSV input cannot be turned into a dataset."""

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class FitError(RuntimeError):
    pass


class NumericalError(ArithmeticError):
    pass
