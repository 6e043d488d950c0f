"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: usage errors exit 1, data
errors exit 2, numerical failures exit 3.
"""


class SilcarveError(Exception):
    """Base class for all package-specific errors."""


class UsageError(SilcarveError):
    """Bad invocation: unknown flags, malformed config keys, bad types."""


class DataError(SilcarveError):
    """Invalid or inconsistent input data (masks, cameras, files)."""


class NumericalError(SilcarveError):
    """Optimization diverged or produced non-finite values."""
