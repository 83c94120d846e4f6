"""Exception hierarchy shared by the library and the command line."""


class MorphoError(Exception):
    """Base class for all errors raised by morpho."""

    exit_code = 1


class DimensionMismatchError(MorphoError, ValueError):
    exit_code = 3


class MeshError(MorphoError, ValueError):
    """Malformed or degenerate triangle mesh."""

    exit_code = 4


class OpenSurfaceError(MeshError):
    """A region submesh that should be closed has boundary edges."""

    exit_code = 5


class DegenerateShapeError(MorphoError, ValueError):
    """Landmark configuration does not determine a rotation."""

    exit_code = 6


class DataError(MorphoError, ValueError):
    """Malformed input table or file; the message names the offender."""

    exit_code = 7


class ConfigError(MorphoError, ValueError):
    exit_code = 8


class FitError(MorphoError, RuntimeError):
    """A model could not be fitted (single class, divergence, zero signal)."""

    exit_code = 9


class UsageError(MorphoError):
    """Unknown flag or invalid command-line value."""

    exit_code = 2
