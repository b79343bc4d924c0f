"""
Configuration Loading - defaults.yaml, optional user file, CLI overrides
"""
import os
from typing import Any, Dict, Optional

import yaml
from dotenv import find_dotenv, load_dotenv

from utils.errors import InvalidParameterError

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), 'config')
DEFAULTS_PATH = os.path.join(CONFIG_DIR, 'defaults.yaml')
PROJECT_ENV = os.path.join(os.path.dirname(os.path.dirname(__file__)), '.env')


def load_yaml(path: str) -> Dict[str, Any]:
    """Load a flat key-value YAML document"""
    with open(path, 'r') as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise InvalidParameterError(f"Config file {path} must be a key-value mapping")
    for key, value in data.items():
        if isinstance(value, (dict, list)):
            raise InvalidParameterError(f"Config key '{key}' in {path} must be a scalar")
    return data


def load_defaults() -> Dict[str, Any]:
    """Load the packaged defaults"""
    return load_yaml(DEFAULTS_PATH)


def load_config(
    path: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None
) -> Dict[str, Any]:
    """
    Merge configuration sources

    Args:
        path: Optional user config file
        overrides: CLI values; None entries are ignored

    Returns:
        Merged configuration (CLI > file > defaults)
    """
    config = load_defaults()

    if path:
        if not os.path.exists(path):
            raise InvalidParameterError(f"Config file not found: {path}")
        user = load_yaml(path)
        unknown = sorted(set(user) - set(config))
        if unknown:
            raise InvalidParameterError(f"Unknown config keys: {', '.join(unknown)}")
        config.update(user)

    for key, value in (overrides or {}).items():
        if value is not None:
            config[key] = value

    return config


def load_environment() -> None:
    """Load .env from the working directory, then the project directory; set variables win"""
    load_dotenv(find_dotenv(usecwd=True))
    load_dotenv(PROJECT_ENV)


def get_thread_count(default: int = 4) -> int:
    """Worker cap from SHRINKER_THREADS (read from the environment or .env)"""
    load_environment()
    raw = os.getenv('SHRINKER_THREADS')
    if not raw:
        return default
    try:
        threads = int(raw)
    except ValueError:
        raise InvalidParameterError(f"SHRINKER_THREADS must be an integer, got '{raw}'")
    return max(1, threads)


def parse_float_list(text: Any) -> list:
    """Parse '0.3,0.15' (or a number) into a list of floats"""
    if isinstance(text, (int, float)):
        return [float(text)]
    try:
        return [float(item) for item in str(text).split(',') if item.strip()]
    except ValueError:
        raise InvalidParameterError(f"Expected a comma-separated list of numbers, got '{text}'")
