"""Dataclass configuration tree with JSON loading and dotted-key overrides.

Unknown keys are rejected by name, both in config files and in --set
overrides, so typos fail loudly instead of silently using defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(Exception):
    pass


@dataclass
class DataConfig:
    root: str = "data"
    n_train: int = 200
    n_holdout: int = 50
    n_long: int = 20
    t_frames: int = 20
    t_long: int = 60
    k_refs: int = 4
    dt: int = 4
    height: int = 32
    width: int = 32
    spin_frac: float = 0.5
    tumble_frac: float = 0.2
    translate_frac: float = 0.15
    shake_frac: float = 0.15


@dataclass
class ModelConfig:
    d: int = 128          # anchor-transformer token width
    d_m: int = 64         # motion embedding dimension
    d_enc: int = 64       # motion encoder token width
    enc_blocks: int = 2
    l_blocks: int = 4     # stage-I transformer depth
    l_video: int = 4      # stage-II trunk depth
    heads: int = 4
    patch: int = 4
    registers: int = 4
    tap_layer: int = -1   # -1 means penultimate block
    adapter_depths: tuple = (0, 2, 3)

    def resolved_tap(self) -> int:
        return self.l_blocks - 2 if self.tap_layer < 0 else self.tap_layer


@dataclass
class AugmentConfig:
    scale_jitter: float = 0.1
    translate_frac: float = 0.05
    shear_deg: float = 5.0
    brightness: float = 0.2
    contrast: float = 0.2
    blur_sigma_min: float = 0.5
    blur_sigma_max: float = 2.0
    noise_sigma_max: float = 0.05


@dataclass
class Stage1Config:
    batch: int = 8
    lr: float = 3e-4
    steps: int = 3000
    lambda_l2: float = 1.0
    lambda_perc: float = 0.1
    lambda_ssim: float = 0.1
    log_every: int = 100


@dataclass
class Stage2Config:
    batch: int = 4
    lr: float = 3e-4
    steps: int = 1200
    beta_hoi: float = 2.0
    augment: bool = True
    adapter_only: bool = False
    log_every: int = 50
    aug: AugmentConfig = field(default_factory=AugmentConfig)


@dataclass
class InferConfig:
    steps: int = 8        # Euler integration steps
    alpha: float = 1.0    # attention-enhancement strength
    t_seg: int = 20
    bias_clamp: float = 15.0
    seg_overlap: bool = True


@dataclass
class PathsConfig:
    workdir: str = "runs"
    stage1: str = "runs/stage1.ckpt"
    stage2: str = "runs/stage2.ckpt"
    out: str = "runs/out"


@dataclass
class Config:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: Stage1Config = field(default_factory=Stage1Config)
    train2: Stage2Config = field(default_factory=Stage2Config)
    infer: InferConfig = field(default_factory=InferConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)


def _apply_dict(obj, data: dict, prefix: str = "") -> None:
    known = {f.name: f for f in fields(obj)}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown config key {prefix + key!r}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current) and not isinstance(current, type):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {prefix + key!r} expects an object")
            _apply_dict(current, value, prefix=f"{prefix}{key}.")
        else:
            setattr(obj, key, _coerce(current, value, prefix + key))


def _coerce(current, value, keypath: str):
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"config key {keypath!r} expects a boolean")
        return value
    if isinstance(current, int) and not isinstance(current, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {keypath!r} expects a number")
        return int(value)
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {keypath!r} expects a number")
        return float(value)
    if isinstance(current, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"config key {keypath!r} expects a list")
        return tuple(int(v) for v in value)
    return value


def load_config(path=None, overrides: list[str] | None = None) -> Config:
    cfg = Config()
    if path is not None:
        with open(path) as f:
            data = json.load(f)
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        _apply_dict(cfg, data)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node: dict = {}
        leaf = node
        parts = key.split(".")
        for part in parts[:-1]:
            leaf[part] = {}
            leaf = leaf[part]
        leaf[parts[-1]] = value
        _apply_dict(cfg, node)
    return cfg


def config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def save_config(cfg: Config, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=1, sort_keys=True))
