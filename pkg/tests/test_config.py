import json

import pytest

from adata.config import (
    config_to_dict,
    load_config,
    parse_k_rule,
    semantic_token_count,
)
from adata.errors import ConfigError
from adata.grids import GranularityProfile


class TestDefaults:
    def test_default_profiles(self):
        config = load_config()
        assert [p.pool_factor for p in config.profiles] == [4, 2, 1]
        assert [p.cluster_count for p in config.profiles] == [5, 20, 50]

    def test_seed_derivation(self):
        config = load_config(overrides={"seed": 100})
        assert config.seeds.base == 100
        assert config.seeds.embed == 101
        assert config.seeds.cluster == 104

    def test_env_seed(self, monkeypatch):
        monkeypatch.setenv("ADATA_SEED", "55")
        config = load_config()
        assert config.seeds.base == 55

    def test_flag_beats_env(self, monkeypatch):
        monkeypatch.setenv("ADATA_SEED", "55")
        config = load_config(overrides={"seed": 9})
        assert config.seeds.base == 9


class TestFileLoading:
    def test_file_values_and_overrides(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"feature_weight": 0.9, "grid_side": 8}))
        config = load_config(path, overrides={"grid_side": 16})
        assert config.feature_weight == 0.9
        assert config.grid_side == 16

    def test_explicit_seeds_survive_base_override(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"seeds": {"cluster": 77}}))
        config = load_config(path, overrides={"seed": 10})
        assert config.seeds.cluster == 77
        assert config.seeds.embed == 11

    def test_unknown_keys_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"blorp": 1}))
        with pytest.raises(ConfigError):
            load_config(path)

    def test_profiles_from_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(
            json.dumps(
                {
                    "profiles": [
                        {"pool_factor": 2, "cluster_count": 4, "projector_index": 0},
                        {"pool_factor": 1, "cluster_count": 8, "projector_index": 1},
                    ]
                }
            )
        )
        config = load_config(path)
        assert len(config.profiles) == 2

    def test_bad_json(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{nope")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.json")


class TestValidation:
    def test_pool_factor_must_divide_side(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"grid_side": 10}))
        with pytest.raises(ConfigError):
            load_config(path)  # default profile has pool_factor 4

    def test_negative_weight_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"feature_weight": -0.1}))
        with pytest.raises(ConfigError):
            load_config(path)


class TestKRule:
    def test_half_beta(self):
        rule = parse_k_rule("half_beta")
        assert rule(5) == 3
        assert rule(50) == 25

    def test_fixed(self):
        assert parse_k_rule("fixed:7")(50) == 7

    def test_bad_rule(self):
        with pytest.raises(ConfigError):
            parse_k_rule("most_of_them")
        with pytest.raises(ConfigError):
            parse_k_rule("fixed:zero")

    def test_semantic_token_count(self):
        config = load_config()
        profile = GranularityProfile(1, 50, 2)
        assert semantic_token_count(config, profile) == 25


def test_config_round_trips_through_dict(tmp_path):
    config = load_config()
    echoed = config_to_dict(config)
    path = tmp_path / "echo.json"
    path.write_text(json.dumps(echoed))
    again = load_config(path)
    assert config_to_dict(again) == echoed
