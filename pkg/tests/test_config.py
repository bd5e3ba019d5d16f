import json

import pytest

from factorial_platform.config import (
    DEFAULT_SEED,
    RunConfig,
    parse_effects,
    parse_estimands,
    parse_grid,
    resolve_config,
)
from factorial_platform.errors import InputError
from factorial_platform.estimation import Alternative, Correction
from factorial_platform.power import AllocationRule


def test_defaults():
    config = RunConfig()
    assert config.alpha == 0.05
    assert config.alternative is Alternative.TWO_SIDED
    assert config.correction is Correction.IER
    assert config.criterion is AllocationRule.D
    assert config.seed == DEFAULT_SEED
    assert config.estimands == ("linear",)


def test_environment_overrides_defaults(monkeypatch):
    monkeypatch.setenv("FACTORIAL_ALPHA", "0.1")
    monkeypatch.setenv("FACTORIAL_SEED", "42")
    monkeypatch.setenv("FACTORIAL_LOG_LEVEL", "debug")
    config = RunConfig.from_env()
    assert config.alpha == 0.1
    assert config.seed == 42
    assert config.log_level == "DEBUG"


def test_precedence(monkeypatch, tmp_path):
    monkeypatch.setenv("FACTORIAL_ALPHA", "0.1")
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"alpha": 0.2, "draws": 50, "correction": "eer"}), encoding="utf-8")
    config = resolve_config({"alpha": 0.01}, str(path))
    assert config.alpha == 0.01
    assert config.draws == 50
    assert config.correction is Correction.BONFERRONI


def test_unknown_key_is_rejected():
    with pytest.raises(InputError, match="Unknown configuration key"):
        RunConfig().update({"alpah": 0.1})


def test_none_values_are_ignored():
    assert RunConfig().update({"alpha": None}).alpha == 0.05


@pytest.mark.parametrize(
    "values",
    [{"alpha": 1.5}, {"target_power": 1.0}, {"draws": 0}, {"seed": -3}, {"log_level": "loud"}],
)
def test_validate(values):
    with pytest.raises(InputError):
        RunConfig().update(values).validate()


def test_bad_config_file(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(InputError, match="not valid JSON"):
        resolve_config(config_path=str(path))
    path.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(InputError, match="JSON object"):
        resolve_config(config_path=str(path))
    path.write_bytes(b"{\"alpha\": \"\xff\"}")
    with pytest.raises(InputError, match="not valid UTF-8"):
        resolve_config(config_path=str(path))


def test_parse_grid():
    assert parse_grid("16:40:8") == (16, 24, 32, 40)
    assert parse_grid("96, 192") == (96, 192)
    assert parse_grid([96.0, 104.0]) == (96, 104)
    with pytest.raises(InputError):
        parse_grid("16:40")
    with pytest.raises(InputError):
        parse_grid("96.5")


def test_parse_effects():
    assert parse_effects("R=0.1875, GxI=0.1042") == {"R": 0.1875, "GxI": 0.1042}
    assert parse_effects({"R": 0.2}) == {"R": 0.2}
    with pytest.raises(InputError):
        parse_effects("R:0.2")


def test_parse_estimands_always_includes_linear():
    assert parse_estimands(["logfe"]) == ("linear", "logfe")
    assert parse_estimands("linear,logitfe,logitfe") == ("linear", "logitfe")
    with pytest.raises(InputError):
        parse_estimands("probit")


def test_to_dict_is_plain():
    data = RunConfig().update({"factors": "R,G,I", "criterion": "balanced"}).to_dict()
    assert data["factors"] == ["R", "G", "I"]
    assert data["criterion"] == "d"
    assert data["alternative"] == "two-sided"
    json.dumps(data)
