"""Exception types shared across the package."""

from __future__ import annotations


class DataError(Exception):
    """Raised when an input file or dataset is unreadable or malformed."""


class ArtifactMismatchError(Exception):
    """Raised when saved artifacts disagree (vocabulary hash, kernel config, dims)."""


class UndefinedMetricError(Exception):
    """Raised when a requested metric has an undefined denominator."""


class UsageError(Exception):
    """Raised for bad command-line arguments or argument combinations."""
