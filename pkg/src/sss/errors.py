"""Exception types raised across the package."""


class SSSError(Exception):
    """Base class for all package errors."""


class EmptyAggregation(SSSError, ValueError):
    pass


class DimensionMismatch(SSSError, ValueError):
    pass


class InvalidWeights(SSSError, ValueError):
    pass


class InvalidProbability(SSSError, ValueError):
    pass


class ParseError(SSSError, ValueError):
    """A series file holds a cell that is not a finite number."""

    def __init__(self, path, row, column, cell):
        self.path = path
        self.row = row
        self.column = column
        self.cell = cell
        super().__init__(f"{path}: row {row}, column {column}: cannot parse {cell!r}")


class EmptySeries(SSSError, ValueError):
    pass


class DuplicateId(SSSError, ValueError):
    pass


class ManifestError(SSSError, ValueError):
    pass


class SeriesTooShort(SSSError, ValueError):
    pass


class MissingClass(SSSError, ValueError):
    pass


class StratificationError(SSSError, ValueError):
    pass


class PackingError(SSSError, ValueError):
    pass


class EmptyDataset(SSSError, ValueError):
    pass


class EpochExhausted(SSSError):
    """Raised by a sampler once every window of the epoch has been emitted."""


class DanglingRef(SSSError, LookupError):
    pass


class NonFiniteGradient(SSSError, FloatingPointError):
    pass


class EmptyCalibration(SSSError, ValueError):
    pass


class InvalidBinWidth(SSSError, ValueError):
    pass


class UndefinedMetric(SSSError, ValueError):
    pass


class ConfigError(SSSError, ValueError):
    pass


class CheckpointError(SSSError, ValueError):
    pass


class IncompatibleCheckpoint(SSSError, ValueError):
    """Checkpoint and dataset disagree on a shape field."""

    def __init__(self, field, expected, found):
        self.field = field
        self.expected = expected
        self.found = found
        super().__init__(f"incompatible {field}: checkpoint has {expected}, data has {found}")
