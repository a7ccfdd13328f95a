"""
Configuration Module

Loads environment overrides from a .env file and exposes the process-wide settings
used across the packages, plus the YAML loader for structured config files.
"""

import logging
import os
from pathlib import Path
from typing import Any, Optional, Type, TypeVar

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ValidationError

from heightlane.exceptions import ConfigError

# Load environment variables from .env file
load_dotenv()

DATABASE_URL = os.getenv("HEIGHTLANE_DATABASE_URL", "sqlite:///./heightlane_runs.db")
LOG_LEVEL = os.getenv("HEIGHTLANE_LOG_LEVEL", "INFO")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

M = TypeVar("M", bound=BaseModel)


def configure_logging(level: Optional[str] = None) -> None:
    """
    Install a single stream handler on the root logger.

    Args:
        level (str, optional): Log level name. Defaults to HEIGHTLANE_LOG_LEVEL.
    """
    root = logging.getLogger()
    if not any(getattr(h, "_heightlane", False) for h in root.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._heightlane = True
        root.addHandler(handler)
    root.setLevel((level or LOG_LEVEL).upper())


def seed_override() -> Optional[int]:
    """Seed forced through HEIGHTLANE_SEED, if set."""
    value = os.getenv("HEIGHTLANE_SEED")
    if value is None or value.strip() == "":
        return None
    try:
        return int(value)
    except ValueError as exc:
        raise ConfigError(f"HEIGHTLANE_SEED must be an integer, got {value!r}") from exc


def served_model_paths() -> tuple:
    """Checkpoint and config file used by the HTTP inference route."""
    return os.getenv("HEIGHTLANE_CHECKPOINT"), os.getenv("HEIGHTLANE_CONFIG")


def read_yaml(path: Path) -> dict:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def load_model(path: Path, model: Type[M], overrides: Optional[dict] = None) -> M:
    """
    Read a YAML file and validate it into a pydantic model.

    Args:
        path (Path): YAML file
        model (Type[BaseModel]): Target schema
        overrides (dict, optional): Top-level keys replacing file values

    Returns:
        BaseModel: The validated config

    Raises:
        ConfigError: If the file is unreadable or fails validation
    """
    data = read_yaml(path)
    if overrides:
        data.update(overrides)
    return validate_model(data, model, source=str(path))


def validate_model(data: Any, model: Type[M], source: str = "config") -> M:
    try:
        return model.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
