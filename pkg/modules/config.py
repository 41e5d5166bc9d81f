"""
Configuration Module
====================

Environment-backed settings for the command line and the batch runners.

Features:
- Safe typed readers for environment variables (warning + default on bad values)
- AppSettings model validated with pydantic
- .env loading through python-dotenv
"""

import logging
import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field, validator

logger = logging.getLogger(__name__)

_TRUE = ("true", "1", "yes", "on")
_FALSE = ("false", "0", "no", "off")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


def safe_env_str(var_name: str, default: str = "") -> str:
    value = os.getenv(var_name)
    return default if value is None or value.strip() == "" else value.strip()


def safe_env_int(var_name: str, default: int = 0) -> int:
    value = os.getenv(var_name)
    if value is None or value.strip() == "":
        return default
    try:
        return int(value)
    except ValueError:
        logger.warning(f"Invalid environment variable {var_name}={value!r}, using default: {default}")
        return default


def safe_env_float(var_name: str, default: float = 0.0) -> float:
    value = os.getenv(var_name)
    if value is None or value.strip() == "":
        return default
    try:
        return float(value)
    except ValueError:
        logger.warning(f"Invalid environment variable {var_name}={value!r}, using default: {default}")
        return default


def safe_env_bool(var_name: str, default: bool = False) -> bool:
    value = os.getenv(var_name)
    if value is None or value.strip() == "":
        return default
    lowered = value.strip().lower()
    if lowered in _TRUE:
        return True
    if lowered in _FALSE:
        return False
    logger.warning(f"Invalid environment variable {var_name}={value!r}, using default: {default}")
    return default


class AppSettings(BaseModel):
    """Process-wide defaults; command-line flags override them per run."""
    threads: int = Field(4, ge=1, description="Worker threads for sweeps and multi-case reports")
    log_level: str = Field("INFO", description="Level of the file and performance logs")
    log_dir: Path = Field(Path("logs"), description="Directory for app.log, audit.jsonl and performance.log")
    max_psd_dim: int = Field(64, ge=2, description="Largest PSD block order after the real embedding")
    max_iterations: int = Field(200, gt=0, description="Interior-point iteration cap")
    reference_file: Optional[Path] = Field(None, description="Reference-values override")
    case_dir: Optional[Path] = Field(None, description="Directory with large case files for slow checks")

    @validator("log_level")
    def known_level(cls, v):
        level = v.upper()
        if level not in LOG_LEVELS:
            raise ValueError(f"log level must be one of {LOG_LEVELS}, got {v!r}")
        return level


def load_settings(env_file: Optional[str] = None) -> AppSettings:
    """Read ``.env`` (when present) and build AppSettings from the environment."""
    load_dotenv(env_file, override=False)
    reference = safe_env_str("OPF_REFERENCE_FILE")
    case_dir = safe_env_str("OPF_CASE_DIR")
    level = safe_env_str("OPF_LOG_LEVEL", "INFO").upper()
    if level not in LOG_LEVELS:
        logger.warning(f"Invalid OPF_LOG_LEVEL={level!r}, using INFO")
        level = "INFO"
    return AppSettings(
        threads=max(1, safe_env_int("OPF_THREADS", 4)),
        log_level=level,
        log_dir=Path(safe_env_str("OPF_LOG_DIR", "logs")),
        max_psd_dim=max(2, safe_env_int("OPF_MAX_PSD_DIM", 64)),
        max_iterations=max(1, safe_env_int("OPF_MAX_ITER", 200)),
        reference_file=Path(reference) if reference else None,
        case_dir=Path(case_dir) if case_dir else None,
    )
