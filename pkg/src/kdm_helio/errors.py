"""Exception hierarchy shared by the library and the command line.

Each class carries a ``category`` (printed as ``error: <category>: <detail>``)
and the process exit code the CLI maps it to.
"""


class KdmHelioError(Exception):
    category = "error"
    exit_code = 1


class UsageError(KdmHelioError, ValueError):
    category = "usage"
    exit_code = 2


class InvalidArgumentError(KdmHelioError, ValueError):
    """Bad argument passed to a library function."""

    category = "usage"
    exit_code = 2


class UnsupportedDimensionError(InvalidArgumentError):
    pass


class SchemaError(KdmHelioError, ValueError):
    """Input or store layout does not match the expected schema."""

    category = "schema"
    exit_code = 3


class ParseError(SchemaError):
    def __init__(self, row, column, text):
        self.row = row
        self.column = column
        self.text = text
        super().__init__(f"row {row}, column {column!r}: cannot parse {text!r} as a real")


class DataError(KdmHelioError):
    category = "data"
    exit_code = 4


class NotFoundError(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class StoreLockedError(DataError):
    pass


class EmptyBinError(DataError):
    pass


class MissingDataError(DataError):
    pass


class NonConvergenceError(KdmHelioError, ArithmeticError):
    category = "numeric"
    exit_code = 5
