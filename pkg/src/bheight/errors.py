"""Exception types shared across the package, mapped to process exit codes.

The command line tool translates errors to exit codes: 2 for configuration
problems, 3 for unusable input data, 4 for internal invariant violations.
"""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4


class BHError(Exception):
    """Base class for package errors."""

    exit_code = EXIT_INTERNAL


class ConfigError(BHError):
    """Configuration file or option is malformed or inconsistent."""

    exit_code = EXIT_CONFIG


class ParameterError(ConfigError):
    """A parameter value is outside its documented range."""


class DataError(BHError):
    """Input data cannot be used as requested."""

    exit_code = EXIT_DATA


class FormatError(DataError):
    """A serialized payload is malformed.

    ``offset`` carries the byte position of the fault when it is known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class ValidationError(DataError):
    """Data violates a structural constraint (shape, finiteness, ids)."""


class GeometryError(DataError):
    """Grids or polygons are mutually inconsistent or unsupported."""


class DegeneracyError(GeometryError):
    """Geometry is degenerate (collinear points, zero area)."""


class RecipeError(DataError):
    """A feature recipe cannot be resolved against the available data."""


class AssemblyError(DataError):
    """Sample assembly failed (missing grids, unusable footprints)."""


class InvariantError(BHError):
    """An internal consistency check failed; indicates a bug."""

    exit_code = EXIT_INTERNAL
