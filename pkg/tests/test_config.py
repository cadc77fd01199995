"""Configuration schema gates, default merging and checksums."""

import json

import pytest

from distreward import config


def _minimal(**extra):
    doc = {"version": config.CONFIG_VERSION, "task": "push"}
    doc.update(extra)
    return doc


class TestValidation:
    def test_minimal_doc_fills_defaults(self):
        cfg = config.validate(_minimal())
        assert cfg["demos"]["count"] == 200
        assert cfg["rl"]["batch"] == 256
        assert cfg["reward"]["T"] == "auto"

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(config.ConfigError):
            config.validate(_minimal(surprise=1))

    def test_unknown_nested_key_rejected(self):
        with pytest.raises(config.ConfigError):
            config.validate(_minimal(rl={"warmup": 10}))

    def test_missing_task_rejected(self):
        with pytest.raises(config.ConfigError):
            config.validate({"version": config.CONFIG_VERSION})

    def test_wrong_version_rejected(self):
        with pytest.raises(config.ConfigError):
            config.validate({"version": 999, "task": "push"})

    def test_bad_enum_values(self):
        with pytest.raises(config.ConfigError):
            config.validate(_minimal(task="stacking"))
        with pytest.raises(config.ConfigError):
            config.validate(_minimal(distance={"kind": "resnet"}))
        with pytest.raises(config.ConfigError):
            config.validate(_minimal(rl={"modes": []}))

    def test_range_gates(self):
        with pytest.raises(config.ConfigError):
            config.validate(_minimal(demos={"noise": 0.6}))
        with pytest.raises(config.ConfigError):
            config.validate(_minimal(rl={"gamma": 0.0}))
        with pytest.raises(config.ConfigError):
            config.validate(_minimal(reward={"T": -1.0}))

    def test_auto_sentinels_accepted(self):
        cfg = config.validate(_minimal(
            reward={"T": "auto", "switch_threshold": "auto"}))
        assert cfg["reward"]["switch_threshold"] == "auto"

    def test_speed_range_cross_field(self):
        with pytest.raises(config.ConfigError):
            config.validate(_minimal(demos={"speed_min": 0.9,
                                            "speed_max": 0.5}))

    def test_partial_section_merges_over_defaults(self):
        cfg = config.validate(_minimal(rl={"max_env_steps": 5000}))
        assert cfg["rl"]["max_env_steps"] == 5000
        assert cfg["rl"]["eval_every"] == 2000  # untouched default


class TestLoad:
    def test_load_round_trip(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps(_minimal(task="drawer_open")))
        cfg = config.load(path)
        assert cfg["task"] == "drawer_open"

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(config.ConfigError):
            config.load(path)


class TestChecksum:
    def test_stable_under_key_order(self):
        a = config.validate(_minimal())
        b = json.loads(json.dumps(a))
        b = dict(reversed(list(b.items())))
        assert config.checksum(a) == config.checksum(b)

    def test_sensitive_to_values(self):
        a = config.validate(_minimal())
        b = config.validate(_minimal(rl={"batch": 128}))
        assert config.checksum(a) != config.checksum(b)


class TestRecipes:
    def test_all_recipes_validate(self):
        for name, doc in config.RECIPES.items():
            cfg = config.validate(doc)
            assert cfg["task"] in ("push", "drawer_open", "drawer_close"), name

    def test_recipe_intents(self):
        assert config.validate(
            config.RECIPES["reward_form_ablation"])["reward"]["form"] == \
            "instantaneous"
        assert config.validate(
            config.RECIPES["drawer_subgoals"])["reward"]["use_subgoals"]
        assert config.validate(
            config.RECIPES["baseline_compare"])["distance"]["kind"] == \
            "pixel_l2"
        modes = config.validate(config.RECIPES["push_speedup"])["rl"]["modes"]
        assert set(modes) >= {"shaped_plus_sparse", "sparse_only"}
