"""Shared helpers: error messages for the CLI and timing decorators for the solvers."""

import functools
import time
from collections.abc import Callable
from typing import Any

from .logging import get_logger

logger = get_logger(__name__)


def format_error_message(error: Exception, context: str = "") -> str:
    """One stderr line for ``error``, prefixed with the command that raised it.

    >>> format_error_message(ValueError("jitter 0.5 must be below half the spacing 0.5"), "generate")
    'generate: jitter 0.5 must be below half the spacing 0.5'
    """
    return f"{context}: {error}" if context else str(error)


def log_exception(error: Exception, context: str = "") -> None:
    """Log a failure together with the exit code the CLI will return for it."""
    logger.error(
        "operation failed",
        context=context or None,
        error_type=type(error).__name__,
        error=str(error),
        exit_code=getattr(error, "exit_code", None),
    )


def track_performance[**P, T](func: Callable[P, T]) -> Callable[P, T]:
    """Log the wall time of every call at debug level, failed calls included."""

    @functools.wraps(func)
    def wrapper(*args: P.args, **kwargs: P.kwargs) -> T:
        start = time.perf_counter()
        failed: str | None = None
        try:
            return func(*args, **kwargs)
        except Exception as e:
            failed = type(e).__name__
            raise
        finally:
            logger.debug("timed", function=func.__qualname__, seconds=round(time.perf_counter() - start, 4), failed=failed)

    return wrapper


def monitor_long_running(threshold_seconds: float = 5.0) -> Callable[[Callable[..., Any]], Callable[..., Any]]:
    """Warn when a call takes longer than ``threshold_seconds``.

    Used on the Voronoi construction and the kernel solvers, whose cost grows
    quickly with the window size.
    """

    def decorator(func: Callable[..., Any]) -> Callable[..., Any]:
        @functools.wraps(func)
        def wrapper(*args: Any, **kwargs: Any) -> Any:
            start = time.perf_counter()
            try:
                return func(*args, **kwargs)
            finally:
                seconds = time.perf_counter() - start
                if seconds > threshold_seconds:
                    logger.warning("slow call", function=func.__qualname__, seconds=round(seconds, 2), threshold=threshold_seconds)

        return wrapper

    return decorator
