"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericError -> 3. Programmer errors (bad shapes, invalid arguments)
stay plain ValueError/TypeError.
"""


class SpikeStageError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(SpikeStageError):
    """Invalid or incomplete run configuration."""


class DataError(SpikeStageError):
    """Malformed input data: files, headers, channels, labels, rates."""


class NumericError(SpikeStageError):
    """Non-finite values encountered where finiteness is required."""
