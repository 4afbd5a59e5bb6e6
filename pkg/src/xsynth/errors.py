"""Exception hierarchy shared by the whole package.

Every error raised on a documented contract violation derives from
:class:`XsynthError` so callers can catch the package's failures with a
single handler, while still inheriting the closest builtin category
(``ValueError``, ``OSError``, ...) for pythonic behaviour.
"""


class XsynthError(Exception):
    """Base class for all errors raised by this package."""


# --- image / file I/O -------------------------------------------------------

class UnsupportedFormatError(XsynthError, ValueError):
    """File is not an 8/16-bit grayscale PGM or PNG."""


class CorruptImageError(XsynthError, ValueError):
    """Image file exists but cannot be decoded."""


class CorruptFileError(XsynthError, ValueError):
    """Binary container is truncated or malformed."""


class FormatVersionMismatchError(XsynthError, ValueError):
    """Container magic or version is not one this build understands."""


# --- geometry / shape -------------------------------------------------------

class DimensionMismatchError(XsynthError, ValueError):
    """Operands do not share the required dimensions."""


class OutOfBoundsError(XsynthError, ValueError):
    """Region does not lie inside the parent image."""


class OverlappingRegionsError(XsynthError, ValueError):
    """Two local regions overlap; the weight partition would be ambiguous."""


class ImageTooSmallError(XsynthError, ValueError):
    """Image admits no descriptor placement at the given settings."""


class InvalidParameterError(XsynthError, ValueError):
    """Parameter outside its documented domain."""


# --- training / optimization ------------------------------------------------

class EmptyTrainingSetError(XsynthError, ValueError):
    """No training pairs supplied."""


class MixedRegionError(XsynthError, ValueError):
    """Training pairs carry more than one region tag."""


class DivergedLossError(XsynthError, ArithmeticError):
    """Training loss became non-finite."""


class DivergedObjectiveError(XsynthError, ArithmeticError):
    """Synthesis objective became non-finite."""


# --- evaluation -------------------------------------------------------------

class ZeroVectorError(XsynthError, ValueError):
    """Cosine similarity of a zero vector is undefined."""


class ZeroFeatureVectorError(XsynthError, ValueError):
    """Image produced an all-zero feature map; no embedding exists."""


class MissingEmbeddingError(XsynthError, KeyError):
    """External embedding table has no entry for the requested image id."""


class EmptyScoresError(XsynthError, ValueError):
    """ROC analysis needs at least one genuine and one impostor score."""


class CountMismatchError(XsynthError, ValueError):
    """Landmark sets have different point counts."""


class NoGenuinePairsError(XsynthError, ValueError):
    """Score matrix has no same-identity pair."""


# --- pipeline ---------------------------------------------------------------

class ConfigError(XsynthError, ValueError):
    """Bad pipeline configuration (unknown key, bad value, missing file)."""


class DataError(XsynthError, ValueError):
    """Manifest or input data violates a documented precondition."""
