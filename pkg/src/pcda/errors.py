"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: usage problems exit 1, data problems
exit 2, numerical failures exit 3.
"""


class UsageError(Exception):
    """Bad command line or config input."""


class DataFormatError(Exception):
    """Malformed or inconsistent data on disk or in memory."""


class NumericalError(Exception):
    """A computation produced non-finite values or could not proceed."""
