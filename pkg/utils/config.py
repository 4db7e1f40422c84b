import configparser
import logging
import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv
from pydantic import ValidationError

from core.errors import ConfigError
from utils.models import (
    AssemblyConfig,
    DiffusionConfig,
    ModelConfig,
    PathsConfig,
    RunConfig,
    RunSection,
    TrainingConfig,
)

load_dotenv()

DEFAULT_CONFIG = os.getenv("JTREEKIT_CONFIG", "jtreekit.ini")

logger = logging.getLogger(__name__)

SECTIONS = {
    "paths": PathsConfig,
    "model": ModelConfig,
    "training": TrainingConfig,
    "diffusion": DiffusionConfig,
    "assembly": AssemblyConfig,
    "run": RunSection,
}


def _section(parser: configparser.ConfigParser, name: str, model):
    if not parser.has_section(name):
        return model()
    values = {key: value for key, value in parser.items(name) if value.strip() != ""}
    unknown = sorted(set(values) - set(model.model_fields))
    if unknown:
        raise ConfigError(f"Unknown keys in [{name}]: {', '.join(unknown)}")
    try:
        return model.model_validate(values)
    except ValidationError as exc:
        raise ConfigError(f"Invalid [{name}] section: {exc}") from exc


def load_config(path: Optional[str] = None, seed: Optional[int] = None, workers: Optional[int] = None) -> RunConfig:
    """Read the run configuration; command-line values win over JTREEKIT_SEED, which wins over the file."""
    path = path or DEFAULT_CONFIG
    parser = configparser.ConfigParser()
    parser.optionxform = str
    if Path(path).exists():
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"Cannot parse {path}: {exc}") from exc
        logger.info(f"Loaded configuration from {path}")
    elif path != DEFAULT_CONFIG:
        raise ConfigError(f"Configuration file {path} does not exist")
    else:
        logger.info(f"No configuration file at {path}; using defaults")

    unknown = sorted(set(parser.sections()) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"Unknown configuration sections: {', '.join(unknown)}")

    sections = {name: _section(parser, name, model) for name, model in SECTIONS.items()}
    config = RunConfig(**sections)

    env_seed = os.getenv("JTREEKIT_SEED")
    if env_seed is not None and seed is None:
        try:
            seed = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"JTREEKIT_SEED must be an integer, got {env_seed!r}") from exc
    if seed is not None:
        config.run.seed = seed
    if workers is not None:
        if workers < 1:
            raise ConfigError("--workers must be positive")
        config.run.workers = workers
    return config
