"""Exception types shared across the package.

The CLI maps these onto process exit codes: usage problems exit 1,
data problems exit 2, numerical failures exit 3.
"""


class DimsiftError(Exception):
    """Base class for package errors."""


class UsageError(DimsiftError):
    """Bad arguments, unknown config keys, invalid flag combinations."""


class DataError(DimsiftError):
    """Malformed or incompatible input data (files, shapes, ids, degenerate inputs)."""


class NumericalError(DimsiftError):
    """Numerical failure: rank deficiency, divergence, non-finite values."""
