"""Flat JSON run configuration shared by every CLI command."""

from __future__ import annotations

import json
from typing import Any, Mapping, Optional

from .derainnet import DEFAULT_NOISE_BRANCH, DEFAULT_RAIN_BRANCH, BranchConfig
from .rainmodel import RainConfig
from .tensorcore import ContractViolation
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


_RAIN = RainConfig()
_TRAIN = TrainConfig()

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "synth_seed": None,
    "model_seed": None,
    "train_seed": None,
    # rain generator
    "streak_count": _RAIN.streak_count,
    "length_range": list(_RAIN.length_range),
    "angle_range": list(_RAIN.angle_range),
    "width": _RAIN.width,
    "intensity_range": list(_RAIN.intensity_range),
    "noise_sigma": _RAIN.noise_sigma,
    # network
    "rain_hidden_channels": DEFAULT_RAIN_BRANCH.hidden_channels,
    "rain_num_blocks": DEFAULT_RAIN_BRANCH.num_blocks,
    "rain_shuffle_factor": DEFAULT_RAIN_BRANCH.shuffle_factor,
    "noise_hidden_channels": DEFAULT_NOISE_BRANCH.hidden_channels,
    "noise_num_blocks": DEFAULT_NOISE_BRANCH.num_blocks,
    "noise_shuffle_factor": DEFAULT_NOISE_BRANCH.shuffle_factor,
    # training
    "learning_rate": _TRAIN.learning_rate,
    "adam_beta1": _TRAIN.adam_beta1,
    "adam_beta2": _TRAIN.adam_beta2,
    "adam_eps": _TRAIN.adam_eps,
    "epochs": _TRAIN.epochs,
    "batch_size": _TRAIN.batch_size,
    "patch_size": _TRAIN.patch_size,
    "augment": _TRAIN.augment,
    "checkpoint_interval": 0,
    # paths and switches
    "clean_dir": None,
    "pairs_dir": None,
    "checkpoint": None,
    "in_dir": None,
    "rain_dir": None,
    "derained_dir": None,
    "out": None,
    "out_csv": None,
    "emit_layers": False,
}


def load_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return doc


def resolve(file_values: Optional[Mapping[str, Any]] = None, overrides: Optional[Mapping[str, Any]] = None) -> dict:
    """Defaults <- config file <- command-line overrides; unknown keys are rejected."""
    resolved = dict(DEFAULTS)
    for source in (file_values or {}, overrides or {}):
        unknown = sorted(set(source) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        resolved.update({k: v for k, v in source.items() if v is not None})
    for key in ("synth_seed", "model_seed", "train_seed"):
        if resolved[key] is None:
            resolved[key] = resolved["seed"]
    # materialize every typed config now so bad values fail before any work
    rain_config(resolved)
    branch_configs(resolved)
    train_config(resolved)
    return resolved


def _build(factory, *args, **kwargs):
    try:
        return factory(*args, **kwargs)
    except (ContractViolation, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def rain_config(cfg: Mapping[str, Any], seed: Optional[int] = None) -> RainConfig:
    return _build(
        RainConfig,
        streak_count=int(cfg["streak_count"]),
        length_range=tuple(cfg["length_range"]),
        angle_range=tuple(cfg["angle_range"]),
        width=float(cfg["width"]),
        intensity_range=tuple(cfg["intensity_range"]),
        noise_sigma=float(cfg["noise_sigma"]),
        seed=int(cfg["synth_seed"] if seed is None else seed),
    )


def branch_configs(cfg: Mapping[str, Any]) -> tuple[BranchConfig, BranchConfig]:
    rain = _build(BranchConfig, cfg["rain_hidden_channels"], cfg["rain_num_blocks"], cfg["rain_shuffle_factor"], 3)
    noise = _build(BranchConfig, cfg["noise_hidden_channels"], cfg["noise_num_blocks"], cfg["noise_shuffle_factor"], 6)
    return rain, noise


def train_config(cfg: Mapping[str, Any]) -> TrainConfig:
    tc = _build(
        TrainConfig,
        learning_rate=float(cfg["learning_rate"]),
        adam_beta1=float(cfg["adam_beta1"]),
        adam_beta2=float(cfg["adam_beta2"]),
        adam_eps=float(cfg["adam_eps"]),
        epochs=int(cfg["epochs"]),
        batch_size=int(cfg["batch_size"]),
        patch_size=int(cfg["patch_size"]),
        seed=int(cfg["train_seed"]),
        augment=bool(cfg["augment"]),
    )
    for r in (cfg["rain_shuffle_factor"], cfg["noise_shuffle_factor"]):
        if tc.patch_size % r:
            raise ConfigError(f"patch_size {tc.patch_size} not divisible by shuffle factor {r}")
    return tc


def dumps(cfg: Mapping[str, Any]) -> str:
    return json.dumps(dict(cfg), indent=2, sort_keys=True) + "\n"
