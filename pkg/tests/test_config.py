import json

import pytest

from core.config import RunConfig, build_config, config_hash, env_flag, env_int, from_flat, validate
from core.errors import ConfigError
from core.models.tasks import default_task_roster, resolve_tasks


def test_flat_round_trip():
    cfg = build_config("tiny")
    again = from_flat(json.loads(cfg.to_json()))
    assert again == cfg


def test_defaults_are_desk_scale():
    cfg = RunConfig()
    assert cfg.model.channels == (16, 32, 64, 128)
    assert cfg.model.experts == (4, 4, 4, 4)
    assert cfg.train.batch_size == 32
    assert cfg.model.window == 30
    assert build_config("desk") == validate(RunConfig())


def test_paper_preset():
    cfg = build_config("paper")
    assert cfg.model.experts == (8, 8, 8, 8)
    assert cfg.model.window == 55


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError, match="train.epoch"):
        build_config(overrides={"train.epoch": 3})
    with pytest.raises(ConfigError):
        build_config(overrides={"model": 3})
    with pytest.raises(ConfigError, match="unknown preset"):
        build_config("huge")


def test_precedence(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"train.epochs": 7, "train.batch_p": 3}), encoding="utf-8")
    cfg = build_config("tiny", str(path), {"train.epochs": 9})
    assert cfg.train.epochs == 9
    assert cfg.train.batch_p == 3
    assert cfg.model.window == 6


def test_string_values_are_coerced():
    cfg = build_config(overrides={
        "model.channels": "8,8,16,16",
        "train.seeds": "1,2,3",
        "model.embed_bias": "true",
        "train.max_lr": "0.002",
        "loss.task_weights": {"bmi": 2},
    })
    assert cfg.model.channels == (8, 8, 16, 16)
    assert cfg.train.seeds == (1, 2, 3)
    assert cfg.model.embed_bias is True
    assert cfg.train.max_lr == 0.002
    assert cfg.loss.task_weights == {"bmi": 2.0}


@pytest.mark.parametrize(
    "overrides",
    [
        {"train.epochs": "many"},
        {"model.embed_bias": "maybe"},
        {"train.batch_p": 2.5},
        {"loss.entropy_weight": -1},
        {"model.window": 100},
        {"model.experts": "4,4,4"},
        {"train.base_lr": 0.01},
        {"data.train_subjects": 1, "data.test_subjects": 0},
        {"eval.angle_average": "median"},
    ],
)
def test_invalid_values(overrides):
    with pytest.raises(ConfigError):
        build_config(overrides=overrides)


def test_config_hash_ignores_seed_and_dropout():
    base = build_config("tiny").model
    names = ["bfi_openness", "bmi", "identity"]
    seeded = build_config("tiny", overrides={"model.init_seed": 4, "model.dropout": 0.1}).model
    wider = build_config("tiny", overrides={"model.head_hidden": 16}).model
    assert config_hash(base, names) == config_hash(seeded, names)
    assert config_hash(base, names) != config_hash(wider, names)
    assert config_hash(base, names) != config_hash(base, names[:2])


def test_task_groups_resolve():
    roster = default_task_roster()
    assert len(roster) == 20
    assert len(resolve_tasks(["traits"], roster)) == 17
    assert len(resolve_tasks(["all"], roster)) == 20
    assert [t.name for t in resolve_tasks(["identity+gender"], roster)] == ["gender", "identity"]
    assert [t.name for t in resolve_tasks(["id,bmi"], roster)] == ["bmi", "identity"]
    with pytest.raises(ConfigError, match="unknown tasks"):
        resolve_tasks(["height"], roster)
    with pytest.raises(ConfigError, match="empty"):
        resolve_tasks([" , "], roster)


def test_env_helpers(monkeypatch):
    monkeypatch.setenv("MOME_FLAG", "yes")
    monkeypatch.setenv("MOME_COUNT", "oops")
    assert env_flag("MOME_FLAG")
    assert not env_flag("MOME_UNSET_FLAG")
    assert env_int("MOME_COUNT", 3) == 3
    monkeypatch.setenv("MOME_COUNT", "7")
    assert env_int("MOME_COUNT", 3) == 7
