"""Training configuration: defaults, INI file loading, CLI/env overrides."""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields

from .losses import LossWeights
from .model import ModelConfig
from .stage1 import Stage1Config
from .stage2 import Stage2Config

__all__ = ["TrainConfig", "load_config", "apply_overrides"]

_SECTION = "rirci"


@dataclass
class TrainConfig:
    # optimization
    epochs: int = 100
    batch_size: int = 8
    learning_rate: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    seed: int = 0

    # objective
    lambda1: float = 2.0
    lambda2: float = 1.0
    lambda3: float = 3.0
    gamma: float = 1.5
    alpha_threshold: float = 0.75

    # model variant: 0 = full model, 1-4 = ablation variants
    variant: int = 0
    detach_stage1: bool = False
    two_phase: bool = False

    # architecture scale
    stage1_widths: tuple[int, ...] = (32, 64, 128, 256, 512)
    stage2_base_width: int = 32
    glci_blocks: int = 6
    local_block: tuple[int, int] = (8, 8)
    global_grid: tuple[int, int] = (8, 8)
    refinement_steps: int = 3

    # perceptual extractor
    perceptual_provenance: str = "fixed-seed-random"
    perceptual_width_scale: float = 1.0
    perceptual_weights_path: str = ""

    # data / bookkeeping
    manifest: str = ""
    out_dir: str = "runs/default"
    checkpoint_every: int = 1          # epochs
    val_fraction: float = 0.02
    max_steps: int = 0                 # 0 = no cap (smoke runs set this)

    def __post_init__(self):
        if self.variant not in (0, 1, 2, 3, 4):
            raise ValueError(f"variant must be 0-4, got {self.variant}")

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(lambda1=self.lambda1, lambda2=self.lambda2,
                           lambda3=self.lambda3, gamma=self.gamma,
                           alpha_threshold=self.alpha_threshold)

    def model_config(self) -> ModelConfig:
        cfg = ModelConfig(
            stage1=Stage1Config(widths=tuple(self.stage1_widths),
                                refinement_steps=self.refinement_steps),
            stage2=Stage2Config(base_width=self.stage2_base_width,
                                glci_blocks=self.glci_blocks,
                                local_block=tuple(self.local_block),
                                global_grid=tuple(self.global_grid)),
            detach_stage1=self.detach_stage1,
        )
        if self.variant:
            cfg = cfg.variant(self.variant)
        return cfg

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _parse_value(raw: str, annotation: object, current: object):
    if annotation is bool or isinstance(current, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(current, tuple):
        return tuple(int(v) for v in raw.replace(",", " ").split())
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw


def load_config(path: str | os.PathLike | None = None,
                overrides: dict | None = None) -> TrainConfig:
    """Build a TrainConfig from an INI file, then apply overrides and the
    RIRCI_SEED environment variable (flags beat file, env beats both)."""
    cfg = TrainConfig()
    if path is not None:
        parser = configparser.ConfigParser()
        if not parser.read(os.fspath(path)):
            raise FileNotFoundError(f"config file not found: {path}")
        section = _SECTION if parser.has_section(_SECTION) else parser.default_section
        known = {f.name: f for f in fields(TrainConfig)}
        for key, raw in parser.items(section):
            if key not in known:
                raise KeyError(f"unknown config key {key!r}")
            setattr(cfg, key, _parse_value(raw, known[key].type, getattr(cfg, key)))
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    env_seed = os.environ.get("RIRCI_SEED")
    if env_seed is not None:
        cfg.seed = int(env_seed)
    cfg.__post_init__()
    return cfg


def apply_overrides(cfg: TrainConfig, overrides: dict) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in known:
            raise KeyError(f"unknown config key {key!r}")
        setattr(cfg, key, value)
    return cfg
