"""Exception hierarchy shared across the package.

The CLI maps :class:`MLPRError` subclasses to exit code 1 and ``OSError`` to 2.
"""


class MLPRError(Exception):
    """Base class for contract and numeric failures."""


class ContractError(MLPRError, ValueError):
    """A precondition of an operation was violated."""


class DimensionError(ContractError):
    """Operand shapes are incompatible."""


class NumericError(MLPRError, ArithmeticError):
    """A NaN or Inf appeared where finite values are required."""


class MissingEmbeddingError(MLPRError, KeyError):
    def __init__(self, key):
        super().__init__(key)
        self.key = key

    def __str__(self):
        return f"no embedding stored for id {self.key!r}"


class UndefinedMetricError(MLPRError):
    """Metric is undefined for the given input (e.g. AUC with one class)."""


class ParseError(MLPRError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line
