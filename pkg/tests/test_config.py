import json

import pytest

from bfl.config import (
    ConfigError,
    ExperimentConfig,
    IdxDatasetSpec,
    ToyDatasetSpec,
    config_from_dict,
    config_to_dict,
    load_config,
)


def test_empty_object_gives_defaults():
    cfg = config_from_dict({})
    assert cfg.seed == 0
    assert cfg.rounds == 30
    assert cfg.clients == 20
    assert cfg.hidden_dims == (16, 16)
    assert isinstance(cfg.dataset, ToyDatasetSpec)
    assert cfg.dataset.dims == 2
    assert cfg.defense is None
    assert cfg.attack.kind == "none"
    assert cfg.aggregator.kind == "fedavg"


def test_full_roundtrip_through_dict():
    obj = {
        "seed": 42,
        "rounds": 5,
        "clients": 8,
        "sampled_per_round": 4,
        "local_epochs": 2,
        "batch": 32,
        "hidden_dims": [8, 8],
        "sgd": {"learning_rate": 0.05, "momentum": 0.8, "weight_decay": 0.001},
        "dataset": {"kind": "toy", "num_classes": 4, "per_class": 50,
                    "radius": 2.0, "spread": 0.3, "dims": 6, "test_fraction": 0.25},
        "partition": {"alpha": 0.5, "seed": 9},
        "attack": {"kind": "sign_flip", "epsilon": 0.25, "gamma": 3.0},
        "aggregator": {"kind": "trimmed_mean", "beta": 0.2},
        "defense": {"filter": "cluster", "metric": "loss", "q": 30},
    }
    cfg = config_from_dict(obj)
    assert cfg.dataset.dims == 6
    assert cfg.attack.gamma == 3.0
    assert cfg.defense.filter == "cluster"
    echoed = config_to_dict(cfg)
    again = config_from_dict(echoed)
    assert config_to_dict(again) == echoed


def test_explicit_nulls_for_optional_fields():
    """The echoed dict writes null for unset optional fields; reparsing it
    has to work because sweeps mutate and reload that echo."""
    cfg = config_from_dict({
        "partition": {"alpha": 1.0, "seed": None},
        "attack": {"kind": "none", "gamma": None},
    })
    assert cfg.partition.seed is None
    assert cfg.attack.gamma is None
    echoed = config_to_dict(config_from_dict({}))
    assert echoed["partition"]["seed"] is None
    config_from_dict(echoed)


def test_null_rejected_for_required_types():
    with pytest.raises(ConfigError, match="rounds"):
        config_from_dict({"rounds": None})


def test_unknown_top_level_key():
    with pytest.raises(ConfigError, match="typo_key"):
        config_from_dict({"typo_key": 1})


def test_unknown_nested_key_reports_dotted_path():
    with pytest.raises(ConfigError, match=r"sgd\.momentumm"):
        config_from_dict({"sgd": {"momentumm": 0.9}})


def test_wrong_type_reports_expected():
    with pytest.raises(ConfigError, match="expected int"):
        config_from_dict({"rounds": "thirty"})


def test_bool_is_not_an_int():
    with pytest.raises(ConfigError, match="expected int, got bool"):
        config_from_dict({"seed": True})


def test_int_promotes_to_float():
    cfg = config_from_dict({"sgd": {"learning_rate": 1}})
    assert cfg.sgd.learning_rate == 1.0


def test_sampled_must_fit_in_clients():
    with pytest.raises(ConfigError, match="sampled_per_round"):
        config_from_dict({"clients": 4, "sampled_per_round": 5})


def test_hidden_dims_rejects_bool_and_zero():
    with pytest.raises(ConfigError, match=r"hidden_dims\[1\]"):
        config_from_dict({"hidden_dims": [8, True]})
    with pytest.raises(ConfigError, match="hidden_dims"):
        config_from_dict({"hidden_dims": [8, 0]})


def test_dataset_dims_lower_bound():
    with pytest.raises(ConfigError, match="dims"):
        config_from_dict({"dataset": {"kind": "toy", "dims": 1}})


def test_dataset_bad_kind():
    with pytest.raises(ConfigError, match="'mnist'"):
        config_from_dict({"dataset": {"kind": "mnist"}})


def test_idx_dataset_requires_all_paths():
    with pytest.raises(ConfigError, match="required field is missing"):
        config_from_dict({"dataset": {"kind": "idx", "train_images": "a"}})
    cfg = config_from_dict({"dataset": {
        "kind": "idx", "train_images": "a", "train_labels": "b",
        "test_images": "c", "test_labels": "d"}})
    assert isinstance(cfg.dataset, IdxDatasetSpec)


def test_partition_num_clients_must_match():
    with pytest.raises(ConfigError, match="num_clients"):
        config_from_dict({"clients": 10, "partition": {"num_clients": 12}})


def test_partition_alpha_positive():
    with pytest.raises(ConfigError, match="alpha"):
        config_from_dict({"partition": {"alpha": 0.0}})


def test_attack_validation_surfaces_as_config_error():
    with pytest.raises(ConfigError):
        config_from_dict({"attack": {"kind": "sign_flip", "epsilon": 1.5}})
    with pytest.raises(ConfigError, match=r"gamma_grid\[0\]"):
        config_from_dict({"attack": {"gamma_grid": ["big"]}})


def test_defense_null_versus_object():
    assert config_from_dict({"defense": None}).defense is None
    with pytest.raises(ConfigError, match="expected object or null"):
        config_from_dict({"defense": "adaptive"})
    cfg = config_from_dict({"defense": {}})
    assert cfg.defense is not None
    assert cfg.defense.filter == "adaptive"


def test_defense_bad_metric():
    with pytest.raises(ConfigError):
        config_from_dict({"defense": {"metric": "f1"}})


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="no such file"):
        load_config(str(tmp_path / "absent.json"))


def test_load_config_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(str(p))


def test_load_config_valid_file(tmp_path):
    p = tmp_path / "ok.json"
    p.write_text(json.dumps({"seed": 7, "dataset": {"kind": "toy", "dims": 12}}))
    cfg = load_config(str(p))
    assert cfg.seed == 7
    assert cfg.dataset.dims == 12


def test_direct_construction_validates():
    with pytest.raises(ConfigError, match="rounds"):
        ExperimentConfig(rounds=-1)
    with pytest.raises(ConfigError, match="local_epochs"):
        ExperimentConfig(local_epochs=0)
