"""Exception hierarchy shared across the package.

The CLI maps these onto its exit-code contract: ValidationError -> 1,
NumericError -> 2.
"""


class KrpError(Exception):
    """Base class for all package errors."""


class ValidationError(KrpError):
    """Bad arguments, malformed files, or inconsistent shapes."""


class NumericError(KrpError):
    """A computation failed: singular systems, divergence, non-finite values."""
