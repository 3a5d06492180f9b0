"""Exception hierarchy shared across the engine."""

from __future__ import annotations


class TheraError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(TheraError, ValueError):
    pass


class BackendError(TheraError):
    pass


class BackendTimeoutError(BackendError):
    pass


class ProviderRejectedError(BackendError):
    """Auth failure, rate limiting or any non-retryable HTTP rejection."""


class EmptyResponseError(BackendError):
    pass


class ParseError(TheraError):
    pass


class GenerationError(TheraError):
    pass


class UndefinedCorrelationError(TheraError, ValueError):
    """Correlation requested on constant input."""
