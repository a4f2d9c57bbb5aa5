"""Logging configuration for delone-heat.

Structured logging with structlog. Records go to stderr so the run summary
on stdout stays machine-readable; every record inside a pipeline stage
carries the experiment name and stage via :func:`bind_run`.
"""

import logging
import sys
from collections.abc import Iterator
from contextlib import contextmanager
from typing import Any, cast

import numpy as np
import structlog
from structlog.typing import EventDict, WrappedLogger


def plain_numbers(logger: WrappedLogger, method_name: str, event_dict: EventDict) -> EventDict:
    """Turn numpy scalars and small arrays into builtins so every renderer accepts them."""
    for key, value in event_dict.items():
        if isinstance(value, np.generic):
            event_dict[key] = value.item()
        elif isinstance(value, np.ndarray):
            event_dict[key] = value.tolist() if value.size <= 16 else f"<array shape={value.shape}>"
    return event_dict


class StderrHandler(logging.StreamHandler):  # type: ignore[type-arg]
    """Stream handler bound to the current ``sys.stderr`` rather than the one seen at setup."""

    @property  # type: ignore[override]
    def stream(self) -> Any:
        return sys.stderr

    @stream.setter
    def stream(self, value: Any) -> None:
        pass


def configure_logging(level: int = logging.INFO, json_format: bool = False) -> None:
    """Configure structured logging.

    Args:
        level: Logging level (default: logging.INFO)
        json_format: One JSON object per line instead of the console layout

    """
    shared_processors: list[Any] = [
        structlog.contextvars.merge_contextvars,
        structlog.stdlib.add_log_level,
        structlog.stdlib.add_logger_name,
        structlog.processors.TimeStamper(fmt="iso"),
        plain_numbers,
    ]
    renderer: Any = structlog.processors.JSONRenderer(sort_keys=True) if json_format else structlog.dev.ConsoleRenderer(colors=False)

    structlog.configure(
        processors=[*shared_processors, structlog.processors.format_exc_info, renderer],
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )

    logging.basicConfig(format="%(message)s", handlers=[StderrHandler()], level=level, force=True)
    # scipy and numpy warnings go through the same stream
    logging.captureWarnings(True)


@contextmanager
def bind_run(experiment: str, stage: str) -> Iterator[None]:
    """Attach ``experiment`` and ``stage`` to every record logged inside the block."""
    with structlog.contextvars.bound_contextvars(experiment=experiment, stage=stage):
        yield


def get_logger(name: str | None = None) -> structlog.stdlib.BoundLogger:
    """Get a structured logger."""
    return cast("structlog.stdlib.BoundLogger", structlog.get_logger(name))
