"""Provides the root exception type for callerkit.

Each module defines the specific errors it raises as subclasses of
[CallerkitError][callerkit.errors.CallerkitError] so that callers can catch
every domain failure with a single clause.
"""


class CallerkitError(Exception):
    """Base class for every error raised by callerkit."""

    pass
