"""Run configuration: dataclass sections addressed by flat ``section.key`` names.

Precedence when building a config is CLI flags > config file > defaults.
Config files are YAML or JSON, either nested (``train: {iterations: 10}``)
or flat (``train.iterations: 10``).
"""
from __future__ import annotations

import dataclasses
import json
import os
import platform
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .baselines import TVConfig
from .data import DatasetSpec
from .losses import RecLossConfig, RegLossConfig
from .trainer import ModelConfig, TrainConfig


@dataclass
class LossConfig:
    gamma: float = 1.0
    distance: str = "huber"
    huber_delta: float = 1.0
    lam: float = 0.1
    lcc_window: int = 9

    def rec(self) -> RecLossConfig:
        return RecLossConfig(gamma=self.gamma, distance=self.distance, huber_delta=self.huber_delta)

    def reg(self) -> RegLossConfig:
        return RegLossConfig(lam=self.lam, lcc_window=self.lcc_window)

    def validate(self) -> None:
        self.rec().validate()
        self.reg().validate()


SECTIONS = {"dataset": DatasetSpec, "model": ModelConfig, "loss": LossConfig,
            "train": TrainConfig, "tv": TVConfig}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    tv: TVConfig = field(default_factory=TVConfig)

    def validate(self) -> None:
        for name in SECTIONS:
            section = getattr(self, name)
            if hasattr(section, "validate"):
                try:
                    section.validate()
                except ConfigError:
                    raise
                except ValueError as e:
                    raise ConfigError(f"{name}: {e}") from None

    def flat(self) -> dict:
        return {f"{s}.{k}": (list(v) if isinstance(v, tuple) else v)
                for s in SECTIONS for k, v in asdict(getattr(self, s)).items()}

    def set(self, key: str, value) -> None:
        section, _, name = key.partition(".")
        if section not in SECTIONS or not name:
            raise ConfigError(f"unknown config key {key!r}")
        obj = getattr(self, section)
        types = {f.name: f for f in fields(obj)}
        if name not in types:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(obj, name, _coerce(value, getattr(obj, name), key))


def _coerce(value, current, key: str):
    """Convert ``value`` (often a CLI string) to the type of the current default."""
    try:
        if isinstance(current, bool):
            if isinstance(value, str):
                if value.lower() in ("1", "true", "yes", "on"):
                    return True
                if value.lower() in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if isinstance(current, int):
            f = float(value)
            if f != int(f):
                raise ValueError(value)
            return int(f)
        if isinstance(current, float):
            return float(value)
        if isinstance(current, tuple):
            items = value.split(",") if isinstance(value, str) else list(value)
            return tuple(float(v) for v in items)
        if isinstance(current, list):
            return list(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key}: {value!r}") from None


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and k in SECTIONS and not prefix:
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def read_config_file(path: str | os.PathLike) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file {path} not found")
    text = path.read_text()
    data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return _flatten(data)


def build_config(file: str | os.PathLike | None = None, overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    if file is not None:
        for k, v in read_config_file(file).items():
            cfg.set(k, v)
    for k, v in (overrides or {}).items():
        if v is not None:
            cfg.set(k, v)
    cfg.validate()
    return cfg


def config_from_flat(flat: dict) -> RunConfig:
    cfg = RunConfig()
    for k, v in flat.items():
        cfg.set(k, v)
    return cfg


# Settings the source method leaves open; flagged in every manifest.
OPEN_DEFAULTS = ("loss.gamma", "loss.lam", "loss.huber_delta", "loss.lcc_window", "tv.tau",
                 "model.recon_blocks", "model.recon_width", "model.recon_zero_tail",
                 "model.reg_levels", "model.reg_width", "dataset.amplitude_gain")


def run_manifest(cfg: RunConfig, command: str, extra: dict | None = None) -> dict:
    """Everything needed to rerun: the full flat config, seeds and versions.

    No timestamps or host names, so two identical runs write identical manifests.
    """
    flat = cfg.flat()
    return {
        "tool": "decolearn", "version": __version__, "command": command,
        "numpy": np.__version__, "python": platform.python_version(),
        "config": flat,
        "seeds": {"dataset": cfg.dataset.seed, "model": cfg.model.seed, "train": cfg.train.seed},
        "open_defaults": {k: flat[k] for k in OPEN_DEFAULTS},
        **(extra or {}),
    }


def config_from_manifest(manifest: dict) -> RunConfig:
    return config_from_flat(manifest["config"])


def replace(cfg: RunConfig, **sections) -> RunConfig:
    """Copy with whole sections swapped, e.g. ``replace(cfg, train=TrainConfig(...))``."""
    return dataclasses.replace(cfg, **sections)
