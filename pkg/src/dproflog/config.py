"""Flat key-value run configuration with command-line overrides."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from typing import Optional


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # task selection
    task: str = "program"  # program | addition | kg
    mode: str = ""  # filled by the CLI subcommand

    # data paths
    program: str = ""
    queries: str = ""
    train: str = ""
    valid: str = ""
    test: str = ""
    rules: str = ""
    priors: str = ""
    out_dir: str = "runs/out"
    checkpoint: str = ""

    # scorer
    embedding_dim: int = 64
    k_var_slots: int = 16
    aggregator: str = "mean"
    init_std: float = 0.1

    # logic engine
    occurs_check: bool = False

    # shared training
    seed: int = 0
    max_depth: int = 20
    learning_rate: float = 3e-4
    optimizer: str = "adam"
    epochs: int = 100
    batch_size: int = 128
    eval_every: int = 10
    target_accuracy: float = 0.0  # 0 disables early stopping
    figures: bool = True
    goal_space_cap: int = 10 ** 6

    # policy gradient
    iterations: int = 200
    rollouts_per_query: int = 4
    queries_per_iteration: int = 0  # 0 = all
    clip_range: float = 0.2
    entropy_coef: float = 0.2
    critic_weight: float = 0.5
    ppo_epochs: int = 4
    minibatch_size: int = 64
    kl_stop: float = 0.0
    importance_weight_max: float = 10.0
    use_baseline: bool = False

    # addition task
    seq_len: int = 2
    train_samples: int = 2000
    test_samples: int = 500
    feature_dim: int = 16
    noise_sigma: float = 0.3

    # kg task
    negatives: int = 20
    negatives_train: int = 1
    corruption_mode: str = "tail"
    prior_weight: float = 1.0

    # prove command
    beam_width: int = 8
    mc_samples: int = 2000

    # oracle-check command
    oracle_programs: int = 20
    oracle_tolerance: float = 1e-12


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _parse_value(name: str, raw: str):
    f = _FIELDS.get(name)
    if f is None:
        raise ConfigError(f"unknown configuration key {name!r}")
    raw = raw.strip()
    if f.type in ("int", int):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{name} expects an integer, got {raw!r}")
    if f.type in ("float", float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{name} expects a number, got {raw!r}")
    if f.type in ("bool", bool):
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{name} expects true/false, got {raw!r}")
    return raw


def load_config(path: Optional[str] = None, overrides: Optional[list[str]] = None) -> RunConfig:
    cfg = RunConfig()
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                key, raw = line.split("=", 1)
                setattr(cfg, key.strip(), _parse_value(key.strip(), raw))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, raw = item.split("=", 1)
        setattr(cfg, key.strip(), _parse_value(key.strip(), raw))
    return cfg


def require_paths(cfg: RunConfig, *names: str) -> None:
    for name in names:
        value = getattr(cfg, name)
        if not value:
            raise ConfigError(f"config key {name!r} is required for this command")
        if not os.path.exists(value):
            raise ConfigError(f"path for {name!r} does not exist: {value}")
