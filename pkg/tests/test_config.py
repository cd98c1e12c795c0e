import json

import pytest

from kgalign.config import (RunConfig, apply_overrides, config_from_dict, load_config, parse_override)
from kgalign.graph import ConfigError

from conftest import PRESET


def test_defaults():
    cfg = config_from_dict({})
    assert cfg == RunConfig()
    assert cfg.train.learning_rate == 0.005 and cfg.train.batch_size == 1024
    assert cfg.loss.margin == 1.0 and cfg.loss.scale == 30.0 and cfg.loss.shift == 10.0
    assert cfg.encoder.dim == 100 and cfg.encoder.depth == 2 and cfg.encoder.dropout_rate == 0.3
    assert cfg.eval.csls_k == 10 and cfg.eval.candidates == "test"


def test_preset_loads():
    cfg = config_from_dict(load_config(PRESET))
    assert cfg.mode == "semi"
    assert (cfg.synth.entity_count, cfg.synth.relation_count, cfg.synth.mean_degree) == (200, 10, 6.0)
    assert (cfg.synth.edge_noise, cfg.synth.seed_ratio, cfg.synth.rng_seed) == (0.1, 0.3, 42)
    assert cfg.train.epochs <= 100


def test_echoed_config_round_trips():
    cfg = config_from_dict(load_config(PRESET))
    again = config_from_dict(json.loads(cfg.to_json()))
    assert again == cfg


def test_top_level_seed_reaches_training():
    cfg = config_from_dict({"rng_seed": 7})
    assert cfg.train_effective.rng_seed == 7


@pytest.mark.parametrize("data,needle", [
    ({"colour": 1}, "colour"),
    ({"train": {"lr": 1}}, "lr"),
    ({"train": {"rng_seed": 3}}, "rng_seed"),
    ({"train": {"epochs": 2.5}}, "train.epochs"),
    ({"encoder": {"multi_hop": 1}}, "encoder.multi_hop"),
    ({"mode": "fancy"}, "mode"),
    ({"loss": {"scale": -1}}, "scale"),
    ({"eval": {"k_list": [0]}}, "k_list"),
    ({"eval": {"candidates": "some"}}, "candidates"),
    ({"augment": {"every": 0}}, "every"),
    ({"synth": {"entity_count": 1}}, "entity_count"),
    ({"encoder": []}, "encoder"),
    ({"train_fraction": 1.0}, "train_fraction"),
])
def test_invalid_values_are_config_errors(data, needle):
    with pytest.raises(ConfigError, match=needle):
        config_from_dict(data)


def test_ints_accepted_for_floats():
    assert config_from_dict({"loss": {"margin": 2}}).loss.margin == 2.0


def test_overrides():
    data = apply_overrides({"train": {"epochs": 5}}, ["train.epochs=7", "mode=semi", "dataset=data/x",
                                                      "eval.k_list=[1,5]"])
    assert data == {"train": {"epochs": 7}, "mode": "semi", "dataset": "data/x", "eval": {"k_list": [1, 5]}}
    assert config_from_dict(data).eval.k_list == (1, 5)


@pytest.mark.parametrize("text", ["novalue", "a.b.c=1", "=3"])
def test_bad_override(text):
    with pytest.raises(ConfigError):
        parse_override(text)


def test_override_into_scalar():
    with pytest.raises(ConfigError):
        apply_overrides({"mode": "basic"}, ["mode.x=1"])


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "none.json")
    (tmp_path / "bad.json").write_text("[1]")
    with pytest.raises(ConfigError, match="object"):
        load_config(tmp_path / "bad.json")
    (tmp_path / "broken.json").write_text("{")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(tmp_path / "broken.json")
