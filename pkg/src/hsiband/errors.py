"""Exception hierarchy shared by the library and the CLI.

The CLI maps each category to a fixed process exit code, so library code
should raise the most specific class that applies.
"""


class HsibandError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(HsibandError):
    """Invalid configuration, parameters, or synthetic-cube specification."""

    exit_code = 2


class DataError(HsibandError):
    """Bad input data: I/O failures, malformed rasters, invalid labels."""

    exit_code = 3


class NumericError(HsibandError):
    """Numerical failure, e.g. a non-convergent decomposition."""

    exit_code = 4
