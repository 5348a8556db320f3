"""Exception types raised across the package."""

from __future__ import annotations


class BarrierOssError(Exception):
    """Base class for all package errors."""


class DomainError(BarrierOssError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""

    def __init__(self, message: str, value=None):
        super().__init__(message)
        self.value = value


class ConfigurationError(BarrierOssError, ValueError):
    """An instrument/estimator combination or run configuration is invalid."""


class UnsupportedError(BarrierOssError, NotImplementedError):
    """The request is well-formed but deliberately not supported."""


class OptimizationError(BarrierOssError, RuntimeError):
    """An optimizer could not continue; the partial trace is attached."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])
