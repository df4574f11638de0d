"""Exception hierarchy shared by every stage of the pipeline."""


class NowcastError(Exception):
    """Base class for all errors raised by nowcaster."""


class ConfigError(NowcastError):
    """Invalid or inconsistent run configuration."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class DataError(NowcastError):
    """Input data violates a structural requirement."""


class ParseError(DataError):
    """A CSV cell (usually a date) could not be parsed."""


class PlacementError(DataError):
    """A quarterly value sits on a month that does not end a quarter."""


class SchemaError(DataError):
    """Model and data disagree on the feature set."""


class DomainError(DataError):
    """A transformation was asked for values outside its domain."""


class FillError(DataError):
    """A series has no usable history for missing-value filling."""


class RangeError(DataError):
    """A requested period lies outside the date grid."""


class FitError(NowcastError):
    """Model estimation could not proceed (too little data, too few series)."""


class NumericalError(NowcastError):
    """Non-finite or non-positive quantity where a valid one is required."""


class TrainingError(NumericalError):
    """Network training produced a non-finite loss."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class FormatError(NowcastError):
    """Base class for model-file problems."""


class UnsupportedVersionError(FormatError):
    pass


class IntegrityError(FormatError):
    pass
