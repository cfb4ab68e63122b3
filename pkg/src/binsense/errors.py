"""Exceptions raised by binsense operations."""

from __future__ import annotations


class BinsenseError(ValueError):
    """An input was rejected by an operation's preconditions."""


class EstimationError(BinsenseError):
    """An estimator could not produce a result, even a degraded one."""
