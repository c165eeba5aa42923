"""Exception types shared across the package.

Every error raised on purpose derives from EplError so callers can
distinguish package failures from programming mistakes.
"""


class EplError(Exception):
    pass


class ZeroVectorError(EplError):
    """A direction was required but the vector norm is at or below epsilon."""


class DimensionMismatchError(EplError):
    """Operands disagree on vector dimension or matrix shape."""


class IndexOutOfRangeError(EplError):
    """A class label or row index is outside the valid range."""


class InvalidShapeError(EplError):
    """A requested shape is degenerate (empty, wrong rank, too small)."""


class InvalidSpecError(EplError):
    """A generation or split specification is internally inconsistent."""


class FormatError(EplError):
    """A file on disk does not follow the documented format."""


class ConfigError(EplError):
    """A configuration value or key is invalid."""


class VersionMismatchError(EplError):
    """A persisted artifact declares an unsupported format version."""


class DigestMismatchError(EplError):
    """A checkpoint was produced under a different configuration."""


class CacheMismatchError(EplError):
    """A forward cache does not belong to the encoder handed to backward."""


class EmptyInputError(EplError):
    """An operation received no rows to work on."""


class EmptyClassError(EplError):
    """A per-class reduction found a class with no eligible samples."""


class CheckFailedError(EplError):
    """A verification suite reported at least one failing check."""
