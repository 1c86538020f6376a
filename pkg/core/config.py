"""Run configuration, thread-count discovery and logging setup."""

import json
import logging
import os
import sys
from functools import lru_cache
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, Field, model_validator

from core.errors import InvalidConfigError


THREADS_ENV_VAR = "CORMOTIF_THREADS"

LOG_FORMAT = "ts=%(asctime)s level=%(levelname)s logger=%(name)s msg=%(message)s"

Method = Literal["cormotif", "separate-limma", "all-concord", "full-motif"]


class RunConfig(BaseModel):
    """Every knob of a `hyper`, `fit` or `select` run."""

    matrix: Optional[Path] = None
    design: Optional[Path] = None
    method: Method = "cormotif"
    k: Optional[int] = Field(default=None, ge=1)
    k_range: Optional[tuple[int, int]] = None
    seed: int = Field(default=0, ge=0)
    restarts: int = Field(default=5, ge=1)
    tol: float = Field(default=1e-10, ge=0.0)
    max_iter: int = Field(default=1000, ge=1)
    cutoff: float = Field(default=0.5, gt=0.0, lt=1.0)
    # None means estimate per study
    w: Optional[float] = Field(default=None, gt=0.0)
    proportion: float = Field(default=0.01, gt=0.0, lt=1.0)
    out_prefix: Optional[str] = None
    threads: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _check_method_parameters(self) -> "RunConfig":
        if self.k_range is not None:
            lo, hi = self.k_range
            if lo < 1 or lo > hi:
                raise ValueError(f"k_range must satisfy 1 <= lo <= hi, got {lo}..{hi}")
            if self.method != "cormotif":
                raise ValueError("k_range is only valid with method 'cormotif'")
        return self


def load_config_file(path: str | Path) -> dict[str, Any]:
    """
    Read a JSON config file into a plain dict of RunConfig fields.

    Args:
        path: Location of the JSON object.

    Returns:
        The decoded mapping.

    Raises:
        InvalidConfigError: If the file is not a JSON object.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidConfigError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise InvalidConfigError(f"config file {path} must contain a JSON object")
    return data


def merge_config(file_values: dict[str, Any], flag_values: dict[str, Any]) -> RunConfig:
    """Build a RunConfig where explicitly given flags override file values."""
    merged = dict(file_values)
    merged.update({key: value for key, value in flag_values.items() if value is not None})
    return RunConfig.model_validate(merged)


@lru_cache(maxsize=1)
def get_thread_count() -> int:
    """
    Default worker count for parallel sections.

    Priority:
    1. CORMOTIF_THREADS (environment or .env file)
    2. Number of available cores

    Returns:
        A positive worker count.

    Raises:
        InvalidConfigError: If the environment variable is not a positive integer.
    """
    raw = os.getenv(THREADS_ENV_VAR)
    if raw:
        try:
            value = int(raw)
        except ValueError as exc:
            raise InvalidConfigError(f"{THREADS_ENV_VAR} must be an integer, got {raw!r}") from exc
        if value < 1:
            raise InvalidConfigError(f"{THREADS_ENV_VAR} must be >= 1, got {value}")
        return value
    return os.cpu_count() or 1


def resolve_threads(threads: Optional[int]) -> int:
    return threads if threads is not None else get_thread_count()


def setup_logging(verbosity: int = 0) -> None:
    """
    Install a single key=value stderr handler on the root logger.

    Args:
        verbosity: -1 for warnings only, 0 for info, 1 or more for debug.
    """
    if verbosity < 0:
        level = logging.WARNING
    elif verbosity == 0:
        level = logging.INFO
    else:
        level = logging.DEBUG
    logging.basicConfig(stream=sys.stderr, level=level, format=LOG_FORMAT, force=True)
