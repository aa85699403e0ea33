"""Exception types shared across the package."""


class DenseHarError(Exception):
    """Base class for all package errors."""


class ShapeError(DenseHarError, ValueError):
    """An array does not have the extent required on some axis."""

    def __init__(self, message, axis=None):
        super().__init__(message)
        self.axis = axis


class LabelError(DenseHarError, ValueError):
    """A label is outside ``[0, class_count)``."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class NumericError(DenseHarError, FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class DataError(DenseHarError, ValueError):
    """Malformed dataset file or unusable dataset."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class ConfigError(DenseHarError, ValueError):
    """Bad configuration key or value."""


class ModelFormatError(DenseHarError, ValueError):
    """Base class for model-file decoding failures."""


class BadMagicError(ModelFormatError):
    pass


class VersionMismatchError(ModelFormatError):
    pass


class TruncatedFileError(ModelFormatError):
    pass
