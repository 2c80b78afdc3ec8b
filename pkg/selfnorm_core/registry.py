"""Configuration registry for selfnorm runs.

Loads named run presets from the config directory; a preset is a RunConfig
document with a ``name`` and an optional ``description``.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from .errors import ConfigError
from .models import RunConfig

logger = logging.getLogger("selfnorm.registry")

# Default paths
DEFAULT_CONFIG_DIR = Path(__file__).parent.parent / "config"
USER_CONFIG_DIR = Path.home() / ".selfnorm" / "presets"

INTERNAL_DEFAULTS: dict[str, dict[str, Any]] = {
    "radius": {
        "description": "Sub-Gaussian radius of a replayed observation log",
        "command": "radius",
        "bound": {"kind": "subgaussian", "delta": 0.1, "sigma_subg_sq": 1.0, "gamma": "identity:1.0"},
    },
    "verify": {
        "description": "Closed-form verification suites at desk scale",
        "command": "verify",
        "verify": {"suites": ["identities", "leading_factor", "volume", "oracle"], "n": 1000},
    },
    "bandit": {
        "description": "Two-arm optimistic bandit, sub-Gaussian against Bernstein radius",
        "command": "experiment",
        "experiment": {"kind": "bandit"},
    },
}


def _split_preset(data: dict[str, Any]) -> tuple[str, str, dict[str, Any]]:
    body = dict(data)
    name = body.pop("name", None)
    description = body.pop("description", "")
    if not name:
        raise ValueError("Preset is missing a 'name' field")
    return str(name).strip(), description, body


def load_config_file(path: Path) -> RunConfig:
    """Read a RunConfig from a JSON file (``name``/``description`` are ignored).

    Raises:
        ConfigError: if the file is missing or not JSON.
        pydantic.ValidationError: if a field is invalid.
    """
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"Config file {path} does not exist", field_path=str(path)) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"Invalid JSON in {path}: {exc}", field_path=str(path)) from exc
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must hold a JSON object", field_path=str(path))
    data.pop("name", None)
    data.pop("description", None)
    return RunConfig.model_validate(data)


class ConfigRegistry:
    """Loads run presets from config directories.

    Load order (later overrides earlier):
    1. Built-in defaults (INTERNAL_DEFAULTS)
    2. Package config directory (./config/)
    3. User config directory (~/.selfnorm/presets/)
    """

    def __init__(
        self,
        config_dir: Path | None = None,
        user_config_dir: Path | None = None,
    ) -> None:
        self._config_dir = config_dir or DEFAULT_CONFIG_DIR
        self._user_config_dir = user_config_dir or USER_CONFIG_DIR
        self._presets: dict[str, RunConfig] = {}
        self._descriptions: dict[str, str] = {}
        self._load()

    def _load(self) -> None:
        self._presets.clear()
        self._descriptions.clear()

        for name, defaults in INTERNAL_DEFAULTS.items():
            _, description, body = _split_preset({"name": name, **defaults})
            self._presets[name] = RunConfig.model_validate(body)
            self._descriptions[name] = description

        config_dirs = [self._config_dir]
        if self._user_config_dir.exists():
            config_dirs.append(self._user_config_dir)

        for config_dir in config_dirs:
            if not config_dir.exists():
                continue
            for config_path in sorted(config_dir.glob("*.json")):
                try:
                    data = json.loads(config_path.read_text(encoding="utf-8"))
                except json.JSONDecodeError as exc:
                    logger.warning(f"Invalid JSON in {config_path}: {exc}")
                    continue

                if not data:
                    continue

                try:
                    name, description, body = _split_preset(data)
                    self._presets[name.lower()] = RunConfig.model_validate(body)
                    self._descriptions[name.lower()] = description
                    logger.debug(f"Loaded preset '{name}' from {config_path}")
                except (ValueError, ValidationError) as exc:
                    logger.warning(f"Failed to load {config_path}: {exc}")

    def reload(self) -> None:
        """Reload presets from disk."""
        self._load()

    def list_presets(self) -> list[str]:
        return sorted(self._presets)

    def describe(self, name: str) -> str:
        return self._descriptions.get(name.lower(), "")

    def get_preset(self, name: str) -> RunConfig:
        key = name.lower()
        if key not in self._presets:
            available = ", ".join(self.list_presets())
            raise KeyError(f"Preset '{name}' is not configured. Available presets: {available}")
        return self._presets[key].model_copy(deep=True)

    def resolve(self, name_or_path: str) -> RunConfig:
        """Preset by name, or a config file when the argument names one."""
        path = Path(name_or_path).expanduser()
        if path.suffix == ".json" or path.exists():
            return load_config_file(path)
        try:
            return self.get_preset(name_or_path)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0]), field_path="--config") from exc


_REGISTRY: ConfigRegistry | None = None


def get_registry(config_dir: Path | None = None) -> ConfigRegistry:
    global _REGISTRY
    if _REGISTRY is None:
        _REGISTRY = ConfigRegistry(config_dir)
    return _REGISTRY
