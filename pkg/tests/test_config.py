import pytest

from config import (
    CDAPConfig,
    config_from_dict,
    config_keys,
    load_config,
    parse_override,
    replace_section,
)
from errors import ConfigError


def test_repository_config_matches_defaults(monkeypatch):
    monkeypatch.delenv("CDAP_CONFIG", raising=False)
    assert load_config() == CDAPConfig()


def test_defaults_follow_reported_hyperparameters():
    config = CDAPConfig()
    assert config.loss.token_weight == 0.1
    assert config.loss.span_weight == 1.0
    assert config.loss.consistency_weight == 0.05
    assert config.loss.temperature == 1.0
    assert config.inference.delta == 0.02
    assert config.inference.max_span_len == 8
    assert config.training.warmup_steps == 1000


def test_overrides_are_parsed_as_yaml(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("loss:\n  temperature: 3\n")
    config = load_config(path, ["inference.strategy=union", "model.cross_attention=false", "seed=5"])
    assert config.loss.temperature == 3.0
    assert isinstance(config.loss.temperature, float)
    assert config.inference.strategy == "union"
    assert config.model.cross_attention is False
    assert config.seed == 5


def test_null_override_for_optional_keys():
    config = load_config(None, ["model.max_span_len_train=null", "inference.min_probability=0.3"])
    assert config.model.max_span_len_train is None
    assert config.inference.min_probability == 0.3


def test_missing_explicit_file_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "absent.yaml")


def test_missing_default_file_uses_defaults(tmp_path, monkeypatch):
    monkeypatch.setenv("CDAP_CONFIG", str(tmp_path / "absent.yaml"))
    assert load_config() == CDAPConfig()


@pytest.mark.parametrize(
    "document",
    [
        {"loss": {"gamma": 0.1}},
        {"decoder": {}},
        {"model": {"o_division": "overlap"}},
        {"model": {"prototype": "median"}},
        {"loss": {"temperature": 0}},
        {"loss": {"consistency": "cosine"}},
        {"training": {"batch_size": "two"}},
        {"inference": {"strategy": "beam"}},
        {"embedding": {"provider": "pretrained"}},
        {"seed": 1.5},
    ],
)
def test_invalid_documents_raise_config_error(document):
    with pytest.raises(ConfigError):
        config_from_dict(document)


def test_parse_override_needs_equals_sign():
    assert parse_override("loss.temperature=2") == ("loss.temperature", 2)
    with pytest.raises(ConfigError):
        parse_override("loss.temperature")


def test_config_keys_lists_every_dotted_key():
    keys = config_keys()
    assert keys["seed"] == 42
    assert keys["loss.consistency_weight"] == 0.05
    assert keys["inference.strategy"] == "consistent-greedy"
    assert "sampling.max_attempts" in keys


def test_replace_section_revalidates():
    config = replace_section(CDAPConfig(), "inference", delta=0.1)
    assert config.inference.delta == 0.1
    assert config.loss == CDAPConfig().loss
    with pytest.raises(ConfigError):
        replace_section(config, "inference", delta=-1.0)
