"""Error types shared across the toolkit."""

from __future__ import annotations


class DataError(Exception):
    """Input data violates a contract (bad rows, unknown stock, missing event)."""


class UsageError(Exception):
    """Caller misused an interface (bad flag value, out-of-range parameter)."""


class FitError(Exception):
    """A numerical fit failed to reach its tolerance within the iteration cap."""
