"""Exception hierarchy shared by all modules.

Each error carries an ``exit_code`` so the command line can map failures to
process exit statuses without inspecting messages.
"""


class GmoeError(Exception):
    exit_code = 1


class ConfigError(GmoeError):
    exit_code = 2


class DataError(GmoeError):
    exit_code = 3


class NumericError(GmoeError):
    exit_code = 4


class UnsupportedOrder(DataError):
    pass


class MissingVertex(DataError):
    pass


class OrderTooLarge(DataError):
    pass


class EmptyDataset(DataError):
    pass


class InsufficientData(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


class InconsistentIndicator(DataError):
    pass


class DimensionMismatch(NumericError):
    pass


class ShapeMismatch(NumericError):
    pass


class DegenerateEmbedding(NumericError):
    pass


class MissingCache(NumericError):
    pass


class BudgetExceeded(NumericError):
    pass


class TooLargeForExact(NumericError):
    pass


class NonFiniteGradient(NumericError):
    pass


class MaxIterationsExceeded(NumericError):
    pass
