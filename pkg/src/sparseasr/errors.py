"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data problems
exit 2, numeric failures exit 3.
"""


class SparseAsrError(Exception):
    """Base class for all package errors."""


class InvalidInputError(SparseAsrError):
    """Runtime data violates an operation's preconditions."""


class ConfigurationError(SparseAsrError):
    """A configuration value is out of range or inconsistent."""


class DataFormatError(SparseAsrError):
    """A file is missing, truncated, or carries the wrong magic/layout."""


class NumericError(SparseAsrError):
    """A numeric procedure failed in a way that invalidates its output."""
