"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: UsageError -> 1,
DataError -> 2, NumericalError -> 3.
"""


class ArgctxError(Exception):
    """Base class for all package errors."""


class UsageError(ArgctxError):
    """Bad command-line arguments or malformed configuration."""


class DataError(ArgctxError):
    """Malformed or inconsistent input data (corpus, lexicons, vectors)."""


class NumericalError(ArgctxError):
    """Non-finite values encountered during training or inference."""
