"""Configuration tree with documented defaults.

Config files are JSON and are deep-merged over :data:`DEFAULTS`; unknown
keys are rejected so typos fail loudly.
"""
from __future__ import annotations

import copy
import json
from dataclasses import fields
from pathlib import Path

from .envs.gridworld import GridWorld
from .envs.prompt import JudgeTables
from .irl.gail import GAILConfig
from .irl.rlhf import RewardModelConfig
from .ppo import PPOConfig

CONFIG_VERSION = 1

_TABLES = JudgeTables()

DEFAULTS = {
    "config_version": CONFIG_VERSION,
    "env": {
        "n_prompts": 50,
        "n_eval_cases": 20,
        # judge driving the DRL baseline's reward: "proxy" (generic metric) or "synthetic"
        "ppo_reward": "proxy",
        "gridworld": {"width": 5, "height": 5, "goal_reward": 1.0, "step_penalty": -0.01,
                      "horizon": 20, "discount": 0.9},
    },
    "judge": {
        "mode": "synthetic",
        "endpoint": None,
        "timeout_ms": 30_000,
        "retries": 3,
        "bases": list(_TABLES.bases),
        "beta": _TABLES.beta,
        "gamma_bonus": _TABLES.gamma_bonus,
        "noise_amplitude": _TABLES.noise_amplitude,
        "baseline": _TABLES.baseline,
        "subject_classes": list(_TABLES.subject_classes),
        "preferred": list(_TABLES.preferred),
        "secondary": [list(s) for s in _TABLES.secondary],
        "global_pref": _TABLES.global_pref,
    },
    "ppo": {
        "clip_epsilon": 0.2,
        "epochs_per_update": 4,
        "minibatch_size": 64,
        "value_loss_coeff": 0.5,
        "entropy_coeff": 0.01,
        "discount": 0.0,
        "gae_lambda": 1.0,
        "episodes_per_iteration": 64,
        "iterations": 300,
        "learning_rate": 3e-4,
        "hidden_dims": [64, 64],
    },
    "gail": {
        "iterations": 400,
        "disc_hidden_dims": [100, 100],
        "disc_learning_rate": 3e-4,
        "disc_batch_size": 64,
        "disc_steps_per_iteration": 10,
        "reward_clip": 10.0,
        "label_smoothing": 0.1,
    },
    "rlhf": {"hidden_dims": [64, 64], "learning_rate": 1e-3, "steps": 2000,
             "batch_size": 64, "holdout_fraction": 0.2},
    "irl": {"expert_episodes": 20, "maxent_lr": 0.1, "maxent_iters": 200,
            "maxmargin_epsilon": 0.1, "maxmargin_max_iters": 50},
    "bench": {"seeds": [0, 1, 2, 3, 4], "workers": 1},
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}{key}"
        if key == "run":
            out[key] = copy.deepcopy(val)
        elif key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        elif isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = val
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config root must be a JSON object")
        cfg = _merge(cfg, doc)
    if overrides:
        cfg = _merge(cfg, overrides)
    if cfg["config_version"] != CONFIG_VERSION:
        raise ConfigError(f"unsupported config_version {cfg['config_version']}")
    return cfg


def judge_tables(cfg: dict) -> JudgeTables:
    try:
        tables = JudgeTables.from_config(cfg["judge"])
        tables.check()
    except ValueError as exc:
        raise ConfigError(f"judge tables: {exc}") from exc
    return tables


def _build(cls, section: dict, **extra):
    names = {f.name for f in fields(cls)}
    kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in section.items() if k in names}
    kw.update(extra)
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from exc


def ppo_config(cfg: dict, env: str = "prompt") -> PPOConfig:
    extra = {}
    if env == "gridworld":
        extra["discount"] = cfg["env"]["gridworld"]["discount"]
    return _build(PPOConfig, cfg["ppo"], **extra)


def gail_config(cfg: dict, env: str = "prompt") -> GAILConfig:
    ppo = ppo_config(cfg, env)
    ppo.iterations = cfg["gail"]["iterations"]
    return _build(GAILConfig, cfg["gail"], ppo=ppo)


def reward_model_config(cfg: dict) -> RewardModelConfig:
    return _build(RewardModelConfig, cfg["rlhf"])


def gridworld(cfg: dict) -> GridWorld:
    g = cfg["env"]["gridworld"]
    w, h = int(g["width"]), int(g["height"])
    return GridWorld(w, h, {(w - 1, h - 1): float(g["goal_reward"])},
                     step_penalty=float(g["step_penalty"]), horizon=int(g["horizon"]),
                     start=(0, 0), discount=float(g["discount"]))
