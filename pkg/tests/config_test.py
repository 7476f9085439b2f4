from pathlib import Path

import pytest
from pydantic import ValidationError

from callerkit.config import ConfigError, RunConfig


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ("CALLERKIT_SEED", "CALLERKIT_WORKERS", "CALLERKIT_BACKEND"):
        monkeypatch.delenv(name, raising=False)


def test_defaults():
    config = RunConfig.load()

    assert config.seed == 0
    assert config.workers == 1
    assert config.cache_dir == Path(".callerkit-cache")
    assert config.backend == "proc"
    assert config.no_network


def test_sources_priority(tmp_path, monkeypatch):
    path = tmp_path / "config.json"
    path.write_text('{"seed": 3, "workers": 4, "excluded_tags": [" Toy "]}')
    monkeypatch.setenv("CALLERKIT_SEED", "5")

    config = RunConfig.load(path)
    assert config.seed == 5
    assert config.workers == 4
    assert config.excluded_tags == ["toy"]

    config = RunConfig.load(path, seed=9, workers=None)
    assert config.seed == 9
    assert config.workers == 4


def test_file_is_scoped_to_load(tmp_path):
    path = tmp_path / "config.json"
    path.write_text('{"seed": 3}')

    assert RunConfig.load(path).seed == 3
    assert RunConfig.load().seed == 0


@pytest.mark.parametrize("text", ["{oops", "[1, 2]"])
def test_bad_file(tmp_path, text):
    path = tmp_path / "config.json"
    path.write_text(text)
    with pytest.raises(ConfigError):
        RunConfig.load(path)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "missing.json")


@pytest.mark.parametrize(
    "overrides",
    [
        {"workers": 0},
        {"seed": -1},
        {"assertion_density": 0.0},
        {"backend": "vm"},
    ],
)
def test_validation(overrides):
    with pytest.raises(ValidationError):
        RunConfig.load(**overrides)


def test_digest():
    first = RunConfig.load(seed=1)

    assert first.digest() == RunConfig.load(seed=1).digest()
    assert first.digest() != RunConfig.load(seed=2).digest()
    assert len(first.digest()) == 16
