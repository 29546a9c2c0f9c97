"""Exception types shared across the package.

Every error carries an ``exit_code`` consumed by the command line front
end: 2 for configuration / IO problems, 3 for numerical failures.
"""


class Error(Exception):
    exit_code = 2

    @property
    def kind(self) -> str:
        return type(self).__name__


class NotSquare(Error):
    pass


class Asymmetric(Error):
    pass


class JitterExhausted(Error):
    exit_code = 3


class DimensionMismatch(Error):
    pass


class NonFiniteLoss(Error):
    exit_code = 3


class NegativeVariance(Error):
    exit_code = 3


class InvalidTarget(Error):
    pass


class MTooLarge(Error):
    pass


class NTooLarge(Error):
    pass


class ParseError(Error):
    def __init__(self, row: int, col: int, message: str = ""):
        self.row = row
        self.col = col
        super().__init__(message or f"unparseable cell at row {row}, col {col}")


class MissingColumn(Error):
    pass


class EmptyFile(Error):
    pass


class BadFractions(Error):
    pass


class MissingFile(Error):
    pass


class SchemaError(Error):
    pass
