"""Full two-stage model, ablation variants and checkpoint I/O."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .stage1 import Stage1Config, Stage1Net, Stage1Output
from .stage2 import Stage2Config, Stage2Net, Stage2Output

__all__ = ["ModelConfig", "CheckpointMismatchError", "RirciModel",
           "save_checkpoint", "load_checkpoint", "config_fingerprint"]

VARIANT_FLAGS = {
    1: "predict_image_stage1",   # stage 1 predicts the watermark-free image
    2: "use_ffc",                # FFC-style block instead of GLCI
    3: "only_restoration",       # single-path: restoration only
    4: "only_imagination",       # single-path: imagination only
}


class CheckpointMismatchError(RuntimeError):
    """Checkpoint config fingerprint does not match the built model."""


@dataclass
class ModelConfig:
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    # block gradients from stage 2 into stage 1 (two-phase reading)
    detach_stage1: bool = False

    def __post_init__(self):
        single_path = self.stage2.only_restoration or self.stage2.only_imagination
        if self.stage2.use_ffc and single_path:
            raise ValueError("ablation variants are mutually exclusive")
        if self.stage1.predict_image and (self.stage2.use_ffc or single_path):
            raise ValueError("ablation variants are mutually exclusive")

    def variant(self, number: int) -> "ModelConfig":
        """Return a copy with ablation variant 1-4 enabled."""
        cfg = ModelConfig(stage1=dataclasses.replace(self.stage1),
                          stage2=dataclasses.replace(self.stage2),
                          detach_stage1=self.detach_stage1)
        flag = VARIANT_FLAGS[number]
        if number == 1:
            cfg.stage1 = dataclasses.replace(cfg.stage1, predict_image=True)
        else:
            cfg.stage2 = dataclasses.replace(cfg.stage2, **{flag: True})
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        s1 = dict(d.get("stage1", {}))
        s2 = dict(d.get("stage2", {}))
        if "widths" in s1:
            s1["widths"] = tuple(s1["widths"])
        for key in ("local_block", "global_grid"):
            if key in s2:
                s2[key] = tuple(s2[key])
        return cls(stage1=Stage1Config(**s1), stage2=Stage2Config(**s2),
                   detach_stage1=bool(d.get("detach_stage1", False)))


def config_fingerprint(cfg: ModelConfig) -> str:
    payload = json.dumps(cfg.to_dict(), sort_keys=True, default=list)
    return hashlib.sha256(payload.encode()).hexdigest()


class RirciModel(nn.Module):
    """Watermark exclusion followed by dual-path background restoration."""

    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg or ModelConfig()
        self.stage1 = Stage1Net(self.cfg.stage1)
        self.stage2 = Stage2Net(self.cfg.stage2)

    def forward(self, j: torch.Tensor) -> tuple[Stage1Output, Stage2Output]:
        s1 = self.stage1(j)
        mask, background = s1.mask, s1.background_component
        if self.cfg.detach_stage1:
            mask, background = mask.detach(), background.detach()
        s2 = self.stage2(j, mask, background)
        return s1, s2

    @torch.no_grad()
    def predict(self, j: torch.Tensor) -> tuple[Stage1Output, Stage2Output]:
        """Inference forward with outputs clamped to the unit range."""
        s1, s2 = self(j)
        clamp = lambda t: None if t is None else t.clamp(0.0, 1.0)
        s1.watermark_component = clamp(s1.watermark_component)
        s1.background_component = clamp(s1.background_component)
        return s1, Stage2Output(restored=clamp(s2.restored),
                                imagined=clamp(s2.imagined),
                                fused=clamp(s2.fused))


def save_checkpoint(model: RirciModel, path: str | os.PathLike,
                    extra: dict | None = None) -> None:
    torch.save({
        "config": model.cfg.to_dict(),
        "fingerprint": config_fingerprint(model.cfg),
        "state_dict": model.state_dict(),
        "extra": extra or {},
    }, path)


def load_checkpoint(path: str | os.PathLike,
                    expected: ModelConfig | None = None) -> tuple[RirciModel, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    cfg = ModelConfig.from_dict(payload["config"])
    if expected is not None:
        want, got = config_fingerprint(expected), payload["fingerprint"]
        if want != got:
            raise CheckpointMismatchError(
                "checkpoint config mismatch:\n"
                f"  expected: {json.dumps(expected.to_dict(), sort_keys=True, default=list)}\n"
                f"  found:    {json.dumps(cfg.to_dict(), sort_keys=True, default=list)}")
    model = RirciModel(cfg)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload.get("extra", {})


def import_foreign_weights(model: RirciModel, state_dict: dict,
                           name_map: dict[str, str]) -> list[str]:
    """Optional hook for loading third-party pretrained weights.

    ``name_map`` maps foreign parameter names to this model's names; only
    exact-shape matches are copied. Returns the names actually imported.
    """
    own = model.state_dict()
    imported = []
    for foreign, local in name_map.items():
        if foreign in state_dict and local in own \
                and state_dict[foreign].shape == own[local].shape:
            own[local].copy_(state_dict[foreign])
            imported.append(local)
    model.load_state_dict(own)
    return imported
