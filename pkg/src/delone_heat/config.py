"""Configuration management for delone-heat.

Process-level settings come from environment variables and an optional
``.env`` file via pydantic-settings. Experiment descriptions (what to
generate, which relation, which checks) live in :mod:`delone_heat.pipeline`.
"""

from collections.abc import Iterator
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Any

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings for delone-heat."""

    # Fallback when the distribution metadata is missing
    version: str = "1.0.0"

    # Logging
    log_level: str = "INFO"
    log_json: bool = False

    # Parallelism
    max_workers: int = Field(default=4, ge=1, le=64)

    # Discrete heat kernels
    dense_threshold: int = Field(default=5000, ge=1)
    krylov_max_iter: int = Field(default=400, ge=10)

    # Metric graph FEM
    metric_dense_threshold: int = Field(default=2500, ge=1)
    metric_max_eigenpairs: int = Field(default=4000, ge=2)
    metric_krylov_max_iter: int = Field(default=1000, ge=10)

    # Geometric tolerances (relative to the spacing scale)
    point_tolerance: float = Field(default=1e-12, gt=0)
    length_tolerance: float = Field(default=1e-9, gt=0)

    model_config = SettingsConfigDict(
        env_prefix="DELONE_HEAT_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )


settings = Settings()

_override: ContextVar[Settings | None] = ContextVar("delone_heat_settings", default=None)


def get_settings() -> Settings:
    """Get the settings in effect, honoring any active :func:`settings_override`."""
    override = _override.get()
    return settings if override is None else override


@contextmanager
def settings_override(**updates: Any) -> Iterator[Settings]:
    """Run a block with validated copies of the current settings, e.g. ``--threads``.

    Worker threads started through ``asyncio.to_thread`` inherit the override.
    """
    current = get_settings()
    scoped = Settings(**{**current.model_dump(), **updates})
    token = _override.set(scoped)
    try:
        yield scoped
    finally:
        _override.reset(token)
