import logging
from pathlib import Path
from typing import Any, Dict, Union

import yaml
from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from errors import ConfigurationError
from model.experiment import PolForgeConfig
from model.verification import VerificationPolicy


class Settings(BaseSettings):
    app_name: str = "polforge commitment service"
    version: str = "0.1.0"

    # Commitment ledger storage
    ledger_db_url: str = "sqlite:///polforge_ledger.db"
    ledger_path: Path = Path("polforge_ledger.tsv")

    log_level: str = "INFO"
    workers: int = 1

    model_config = SettingsConfigDict(
        env_prefix='POLFORGE_',
        env_file='.env',
        extra='ignore'
    )


SETTINGS = Settings()

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"


def configure_logging(level: Union[str, int, None] = None) -> None:
    logging.basicConfig(level=level or SETTINGS.log_level, format=LOG_FORMAT)


def _read_yaml(path: Path) -> Dict[str, Any]:
    try:
        with path.open("r", encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
    except OSError as e:
        raise ConfigurationError(f"cannot read configuration {path}: {e}", path=str(path))
    except yaml.YAMLError as e:
        raise ConfigurationError(f"malformed YAML in {path}: {e}", path=str(path))
    if not isinstance(raw, dict):
        raise ConfigurationError(f"configuration {path} must be a mapping", path=str(path))
    return raw


def load_config(path: Union[str, Path]) -> PolForgeConfig:
    """Read a YAML configuration file into a validated PolForgeConfig."""
    path = Path(path)
    raw = _read_yaml(path)
    try:
        return PolForgeConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigurationError(f"invalid configuration {path}: {e}", path=str(path))


def load_policy(path: Union[str, Path]) -> VerificationPolicy:
    """A verification policy file, either bare or under a top-level ``policy`` key."""
    path = Path(path)
    raw = _read_yaml(path)
    try:
        return VerificationPolicy.model_validate(raw.get("policy", raw))
    except ValidationError as e:
        raise ConfigurationError(f"invalid policy {path}: {e}", path=str(path))
