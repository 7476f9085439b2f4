"""Provides the run configuration shared by every command.

Values are resolved from, highest priority first: explicit keyword overrides
(the command line flags), `CALLERKIT_` prefixed environment variables, an
optional JSON configuration file and finally the field defaults.
"""

import hashlib
from contextvars import ContextVar
from pathlib import Path
from typing import Any, Dict, List, Optional

import orjson
from pydantic import BaseSettings, Field, validator

from callerkit.errors import CallerkitError
from callerkit.types import Backend

_config_file: ContextVar[Optional[Path]] = ContextVar(
    "callerkit_config_file", default=None
)


class ConfigError(CallerkitError):
    """Raised when a configuration file cannot be read."""

    pass


def _json_file_source(settings: BaseSettings) -> Dict[str, Any]:
    path = _config_file.get()
    if path is None:
        return {}
    try:
        values = orjson.loads(path.read_bytes())
    except (OSError, orjson.JSONDecodeError) as e:
        raise ConfigError(f"unable to read config file {path}: {e}") from e
    if not isinstance(values, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")

    return values


class RunConfig(BaseSettings):
    """The effective configuration of a run.

    Attributes:
        cache_dir: Root of the snapshot cache.
        out_dir: Default directory for written artifacts.
        seed: Seed used for every sampling decision.
        workers: Size of the parsing and evaluation worker pools.
        min_stars: Minimum popularity for a repository to be accepted.
        recency_months: Maximum age of the last commit, in months.
        min_files: Minimum number of source files in a repository.
        excluded_tags: Domain tags marking algorithmic or tutorial datasets.
        require_docstring: Whether targets without a docstring are dropped.
        assertion_density: Assertion density at which a function counts as a
            test artifact.
        length_tolerance: Relative token tolerance for length matching.
        timeout_s: Wall-clock limit per driver execution.
        memory_mb: Memory limit per driver execution.
        no_network: Whether drivers run without network access.
        backend: The sandbox backend.
        container_image: Image used by the container backend.
    """

    cache_dir: Path = Path(".callerkit-cache")
    out_dir: Path = Path("out")
    seed: int = Field(0, ge=0)
    workers: int = Field(1, ge=1, le=256)
    min_stars: int = Field(100, ge=0)
    recency_months: int = Field(24, ge=1, le=600)
    min_files: int = Field(2, ge=1)
    excluded_tags: List[str] = [
        "algorithmic",
        "competitive-programming",
        "leetcode",
        "tutorial",
    ]
    require_docstring: bool = True
    assertion_density: float = Field(0.3, gt=0.0, le=1.0)
    length_tolerance: float = Field(0.1, ge=0.0, le=1.0)
    timeout_s: float = Field(10.0, gt=0.0, le=3600.0)
    memory_mb: int = Field(512, ge=16, le=65536)
    no_network: bool = True
    backend: Backend = "proc"
    container_image: str = "python:3.10-slim"

    class Config:
        env_prefix = "CALLERKIT_"

        @classmethod
        def customise_sources(
            cls, init_settings, env_settings, file_secret_settings
        ):
            return init_settings, env_settings, _json_file_source

    @validator("excluded_tags", each_item=True)
    def _lower_tags(cls, v: str) -> str:
        return v.strip().lower()

    @classmethod
    def load(
        cls, path: Optional[Path] = None, **overrides: Any
    ) -> "RunConfig":
        """Loads the configuration from all sources.

        Args:
            path: An optional JSON configuration file
            **overrides: Explicit values, `None` values are ignored

        Returns:
            The resolved configuration.
        """
        token = _config_file.set(path)
        try:
            return cls(**{k: v for k, v in overrides.items() if v is not None})
        finally:
            _config_file.reset(token)

    def digest(self) -> str:
        """Returns a short digest of the effective configuration."""
        encoded = orjson.dumps(
            orjson.loads(self.json()), option=orjson.OPT_SORT_KEYS
        )
        return hashlib.sha256(encoded).hexdigest()[:16]
