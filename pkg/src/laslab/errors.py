"""Exception hierarchy shared by every laslab module."""


class LasError(Exception):
    """Base class for all laslab errors."""


class DimensionError(LasError, ValueError):
    """Operand shapes are incompatible."""


class NumericError(LasError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class ConfigError(LasError, ValueError):
    """Invalid configuration value or key."""


class VocabularyError(LasError, IndexError):
    """A character or token id is outside the vocabulary."""

    def __init__(self, index, size=None):
        self.index = index
        self.size = size
        if size is None:
            msg = f"id {index!r} is not in the vocabulary"
        else:
            msg = f"id {index!r} is outside the vocabulary of size {size}"
        super().__init__(msg)


class InputError(LasError, ValueError):
    """Malformed or empty input data."""


class CheckpointError(LasError):
    """A checkpoint file is corrupt or does not match expectations."""


class NormalizationError(LasError, ValueError):
    """Feature statistics cannot be computed."""
