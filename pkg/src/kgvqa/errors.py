"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ``DataError`` -> 2, ``NumericalError`` -> 3.
"""


class DataError(ValueError):
    """Input files or arguments that violate a data contract."""


class EmptyGraph(DataError):
    pass


class MalformedLine(DataError):
    def __init__(self, path, lineno, message):
        self.path = path
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


class DimensionError(DataError):
    pass


class DependencyError(DataError):
    """A pipeline stage was requested before the artifact it needs exists."""


class NumericalError(ArithmeticError):
    """Raised when a loss becomes NaN or infinite during training."""
