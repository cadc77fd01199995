"""Experiment configuration: JSON documents validated against a strict
schema (unknown keys rejected), plus the shipped experiment recipes."""

from __future__ import annotations

import copy
import hashlib
import json

import jsonschema

CONFIG_VERSION = 1

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["version", "task"],
    "properties": {
        "version": {"const": CONFIG_VERSION},
        "task": {"enum": ["push", "drawer_open", "drawer_close"]},
        "demos": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "count": {"type": "integer", "minimum": 1},
                "noise": {"type": "number", "minimum": 0.0, "maximum": 0.5},
                "seed": {"type": "integer"},
                "embodiment": {"enum": ["demonstrator", "robot"]},
                "speed_min": {"type": "number", "minimum": 0.1, "maximum": 1.0},
                "speed_max": {"type": "number", "minimum": 0.1, "maximum": 1.0},
                "max_idle_tail": {"type": "integer", "minimum": 0},
            },
        },
        "distance": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["hold_r", "hold_c", "pixel_l2", "mixture"]},
                "epochs": {"type": "integer", "minimum": 1},
                "batch": {"type": "integer", "minimum": 1},
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer"},
                "margin": {"type": "number", "exclusiveMinimum": 0},
                "holdout": {"type": "integer", "minimum": 1},
                "mixture_alpha": {"type": "number", "exclusiveMinimum": 0},
                "mixture_beta": {"type": "number", "exclusiveMinimum": 0},
                "mixture_gamma": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "reward": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "form": {"enum": ["cumulative", "instantaneous"]},
                "T": {
                    "oneOf": [{"type": "number", "exclusiveMinimum": 0},
                              {"const": "auto"}],
                },
                "mix_sparse": {"type": "boolean"},
                "use_subgoals": {"type": "boolean"},
                "switch_threshold": {
                    "oneOf": [{"type": "number", "exclusiveMinimum": 0},
                              {"const": "auto"}],
                },
                "switch_streak": {"type": "integer", "minimum": 1},
            },
        },
        "rl": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "modes": {
                    "type": "array",
                    "minItems": 1,
                    "items": {"enum": ["sparse_only", "shaped_only",
                                       "shaped_plus_sparse", "oracle"]},
                },
                "seeds": {"type": "array", "minItems": 1,
                          "items": {"type": "integer"}},
                "max_env_steps": {"type": "integer", "minimum": 1},
                "eval_every": {"type": "integer", "minimum": 1},
                "eval_episodes": {"type": "integer", "minimum": 1},
                "initial_exploration_steps": {"type": "integer", "minimum": 1},
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "batch": {"type": "integer", "minimum": 1},
                "grad_steps_per_env_step": {"type": "integer", "minimum": 1},
                "gamma": {"type": "number", "exclusiveMinimum": 0,
                          "maximum": 1.0},
                "replay_capacity": {"type": "integer", "minimum": 1},
                "target_refresh": {"type": "integer", "minimum": 1},
                "target_tau": {"type": "number", "minimum": 0.0,
                               "maximum": 1.0},
                "n_step": {"type": "integer", "minimum": 1},
                "hidden": {"type": "integer", "minimum": 1},
                "epsilon_final": {"type": "number", "minimum": 0,
                                  "maximum": 1.0},
                "epsilon_decay_frac": {"type": "number", "exclusiveMinimum": 0,
                                       "maximum": 1.0},
                "td_clip": {"type": "number", "minimum": 0.0},
                "lr_final": {"type": "number"},
                "threshold": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
    },
}

DEFAULTS = {
    "version": CONFIG_VERSION,
    "task": "push",
    "demos": {"count": 200, "noise": 0.1, "seed": 1, "embodiment": "demonstrator",
              "speed_min": 0.7, "speed_max": 1.0, "max_idle_tail": 10},
    "distance": {"kind": "hold_c", "epochs": 20, "batch": 64, "lr": 1e-4,
                 "seed": 3, "margin": 0.2, "holdout": 20,
                 "mixture_alpha": 0.005, "mixture_beta": 0.02,
                 "mixture_gamma": 0.2},
    "reward": {"form": "cumulative", "T": "auto", "mix_sparse": True,
               "use_subgoals": False, "switch_threshold": "auto",
               "switch_streak": 3},
    "rl": {"modes": ["shaped_plus_sparse", "sparse_only"], "seeds": [0, 1, 2, 3, 4],
           "max_env_steps": 30000, "eval_every": 2000, "eval_episodes": 20,
           "initial_exploration_steps": 1000, "lr": 3e-4, "batch": 256,
           "grad_steps_per_env_step": 1, "gamma": 0.98,
           "replay_capacity": 50000, "target_refresh": 500,
           "target_tau": 0.0, "n_step": 1, "hidden": 64,
           "epsilon_final": 0.05, "epsilon_decay_frac": 0.2, "td_clip": 1.0,
           "lr_final": -1.0, "threshold": 0.9},
}


class ConfigError(ValueError):
    pass


def validate(doc):
    """Schema-validate and fill defaults; returns the effective config."""
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid config: {exc.message}") from exc
    merged = copy.deepcopy(DEFAULTS)
    for key, value in doc.items():
        if isinstance(value, dict):
            merged[key].update(value)
        else:
            merged[key] = value
    demos = merged["demos"]
    if demos["speed_min"] > demos["speed_max"]:
        raise ConfigError("demos.speed_min exceeds speed_max")
    return merged


def load(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return validate(doc)


def checksum(cfg):
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True).encode("utf-8")).hexdigest()


def _recipe(**overrides):
    doc = {"version": CONFIG_VERSION, "task": "push"}
    doc.update(overrides)
    return doc


RECIPES = {
    "push_speedup": _recipe(
        task="push",
        rl={"modes": ["shaped_plus_sparse", "sparse_only"]},
    ),
    "drawer_subgoals": _recipe(
        task="drawer_open",
        reward={"use_subgoals": True},
        rl={"modes": ["shaped_only"]},
    ),
    "reward_form_ablation": _recipe(
        task="push",
        reward={"form": "instantaneous"},
        rl={"modes": ["shaped_plus_sparse"]},
    ),
    "reward_scale_ablation": _recipe(
        task="push",
        reward={"T": 45.0},
        rl={"modes": ["shaped_plus_sparse"]},
    ),
    "baseline_compare": _recipe(
        task="drawer_open",
        distance={"kind": "pixel_l2"},
        reward={"use_subgoals": True},
        rl={"modes": ["shaped_plus_sparse"]},
    ),
}
