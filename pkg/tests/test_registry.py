import json
from pathlib import Path

import pytest

from selfnorm_core.errors import ConfigError
from selfnorm_core.registry import DEFAULT_CONFIG_DIR, INTERNAL_DEFAULTS, ConfigRegistry, load_config_file


@pytest.fixture
def registry(tmp_path):
    config_dir = tmp_path / "config"
    config_dir.mkdir()
    (config_dir / "small.json").write_text(
        json.dumps({"name": "Small", "description": "tiny run", "simulation": {"n_trials": 5, "seed": 3}})
    )
    (config_dir / "broken.json").write_text("{not json")
    (config_dir / "unknown_field.json").write_text(json.dumps({"name": "bad", "simulation": {"n_trails": 5}}))
    return ConfigRegistry(config_dir, user_config_dir=tmp_path / "missing")


def test_internal_defaults_are_present(registry):
    assert set(INTERNAL_DEFAULTS) <= set(registry.list_presets())
    assert registry.get_preset("bandit").command == "experiment"


def test_loads_presets_and_skips_invalid_files(registry):
    assert "small" in registry.list_presets()
    assert "bad" not in registry.list_presets()
    config = registry.get_preset("SMALL")
    assert config.simulation.n_trials == 5
    assert registry.describe("small") == "tiny run"


def test_unknown_preset(registry):
    with pytest.raises(KeyError, match="Available presets"):
        registry.get_preset("nope")


def test_presets_are_copies(registry):
    config = registry.get_preset("small")
    config.simulation.n_trials = 99
    assert registry.get_preset("small").simulation.n_trials == 5


def test_resolve_by_name_and_path(registry, tmp_path):
    assert registry.resolve("small").simulation.seed == 3
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"name": "ignored", "bound": {"kind": "bernstein"}}))
    assert registry.resolve(str(path)).bound.kind == "bernstein"


def test_resolve_unknown_name(registry):
    with pytest.raises(ConfigError) as info:
        registry.resolve("nope")
    assert info.value.field_path == "--config"


def test_load_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config_file(tmp_path / "absent.json")
    path = tmp_path / "list.json"
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config_file(path)


@pytest.mark.parametrize("name", ["radius", "verify", "bandit", "ridge", "tightness"])
def test_shipped_presets_validate(name):
    registry = ConfigRegistry(DEFAULT_CONFIG_DIR, user_config_dir=Path("/nonexistent/selfnorm"))
    assert name in registry.list_presets()
    registry.get_preset(name)
