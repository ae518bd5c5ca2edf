"""Run configuration: JSON key/value tree, env overrides, provenance dump.

Precedence is defaults < config file < MRISYNTH_* environment variables <
explicit CLI flags. Unknown keys are rejected anywhere in the tree, and
every command writes its fully resolved configuration next to its outputs.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError
from .inference import TilingConfig
from .metrics import SsimConfig
from .model import ModelConfig
from .training import TrainConfig
from .volume_io import DEFAULT_NAMING_PATTERN, MODALITIES

ENV_PREFIX = "MRISYNTH_"
RESOLVED_CONFIG_FILENAME = "resolved_config.json"

_TRAIN_KEYS = ("patch", "batch_size", "epochs", "learning_rate", "betas", "eps", "steps_per_epoch")


def _defaults() -> dict[str, Any]:
    return {
        "data_root": None,
        "out_dir": "runs",
        "seed": 0,
        "scenarios": "all",
        "zscore_mode": "all_voxels",
        "naming_pattern": DEFAULT_NAMING_PATTERN,
        "workers": 1,
        "model": ModelConfig().to_dict(),
        "train": {
            "patch": 128,
            "batch_size": 1,
            "epochs": 100,
            "learning_rate": 1e-3,
            "betas": [0.9, 0.999],
            "eps": 1e-8,
            "steps_per_epoch": None,
        },
        "tiling": {"patch": 128, "overlap": 0.5, "sigma_scale": 0.125, "weight_floor": 1e-8},
        "ssim": {"window": 7, "gaussian_sigma": 1.5, "k1": 0.01, "k2": 0.03, "data_range": 1.0},
    }


def _merge(base: dict[str, Any], override: Mapping[str, Any], crumb: str = "") -> None:
    for key, value in override.items():
        path = f"{crumb}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key: {path}")
        if isinstance(base[key], dict) and not isinstance(value, (dict, type(None))):
            raise ConfigError(f"config key {path} must be a table, got {type(value).__name__}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            _merge(base[key], value, crumb=f"{path}.")
        else:
            base[key] = value


def _apply_env(tree: dict[str, Any], env: Mapping[str, str]) -> None:
    for name in sorted(env):
        if not name.startswith(ENV_PREFIX):
            continue
        segments = name[len(ENV_PREFIX) :].lower().split("__")
        node = tree
        for seg in segments[:-1]:
            if seg not in node or not isinstance(node[seg], dict):
                raise ConfigError(f"unknown config key from env {name}: {'.'.join(segments)}")
            node = node[seg]
        leaf = segments[-1]
        if leaf not in node:
            raise ConfigError(f"unknown config key from env {name}: {'.'.join(segments)}")
        raw = env[name]
        try:
            node[leaf] = json.loads(raw)
        except json.JSONDecodeError:
            node[leaf] = raw


def _parse_scenarios(value: Any) -> tuple[str, ...]:
    if value == "all":
        return tuple(MODALITIES)
    if isinstance(value, str):
        value = [value]
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"scenarios must be 'all' or a non-empty list, got {value!r}")
    for m in value:
        if m not in MODALITIES:
            raise ConfigError(f"unknown scenario modality {m!r}, expected one of {MODALITIES}")
    return tuple(value)


@dataclass
class RunConfig:
    """Typed view of one resolved configuration tree."""

    data_root: Path | None
    out_dir: Path
    seed: int
    scenarios: tuple[str, ...]
    zscore_mode: str
    naming_pattern: str
    workers: int
    model: ModelConfig
    tiling: TilingConfig
    ssim: SsimConfig
    train_settings: dict[str, Any]
    resolved: dict[str, Any]

    def train_config(self, target_modality: str) -> TrainConfig:
        kwargs = dict(self.train_settings)
        kwargs["betas"] = tuple(kwargs["betas"])
        if kwargs.get("steps_per_epoch") is None:
            kwargs.pop("steps_per_epoch", None)
        try:
            return TrainConfig(target_modality=target_modality, seed=self.seed, **kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad train settings: {exc}") from exc

    def write_resolved(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / RESOLVED_CONFIG_FILENAME
        path.write_text(json.dumps(self.resolved, indent=2, sort_keys=True) + "\n")
        return path


def load_run_config(
    path: str | Path | None = None,
    env: Mapping[str, str] | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> RunConfig:
    """Build a RunConfig from defaults, an optional JSON file, env, and flags."""
    tree = _defaults()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            loaded = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"{p}: top level must be an object")
        _merge(tree, loaded)
    _apply_env(tree, os.environ if env is None else env)
    if overrides:
        _merge(tree, {k: v for k, v in overrides.items() if v is not None})

    try:
        model = ModelConfig.from_dict(tree["model"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad model settings: {exc}") from exc
    try:
        tiling = TilingConfig(**tree["tiling"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad tiling settings: {exc}") from exc
    try:
        ssim_cfg = SsimConfig(**tree["ssim"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad ssim settings: {exc}") from exc
    if tree["zscore_mode"] not in ("all_voxels", "nonzero_voxels"):
        raise ConfigError(f"zscore_mode must be all_voxels|nonzero_voxels, got {tree['zscore_mode']!r}")
    if not isinstance(tree["seed"], int) or isinstance(tree["seed"], bool):
        raise ConfigError(f"seed must be an integer, got {tree['seed']!r}")
    if not isinstance(tree["workers"], int) or tree["workers"] < 1:
        raise ConfigError(f"workers must be a positive integer, got {tree['workers']!r}")

    unknown_train = set(tree["train"]) - set(_TRAIN_KEYS)
    if unknown_train:
        raise ConfigError(f"unknown config key: train.{sorted(unknown_train)[0]}")

    return RunConfig(
        data_root=None if tree["data_root"] is None else Path(tree["data_root"]),
        out_dir=Path(tree["out_dir"]),
        seed=tree["seed"],
        scenarios=_parse_scenarios(tree["scenarios"]),
        zscore_mode=tree["zscore_mode"],
        naming_pattern=tree["naming_pattern"],
        workers=tree["workers"],
        model=model,
        tiling=tiling,
        ssim=ssim_cfg,
        train_settings=dict(tree["train"]),
        resolved=tree,
    )
