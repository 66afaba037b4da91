"""Training loop with deterministic batching, checkpointing and run records."""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

import numpy as np
import torch

from . import metrics
from .config import TrainConfig
from .data import ManifestDataset, batch_iterator
from .losses import PerceptualExtractor, total_loss
from .model import RirciModel, save_checkpoint

__all__ = ["TrainingDiverged", "RunRecord", "build_extractor", "train"]


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; carries the offending batch ids."""

    def __init__(self, step: int, batch_ids: list):
        super().__init__(f"non-finite loss at step {step}; batch ids: {batch_ids}")
        self.step = step
        self.batch_ids = batch_ids


class RunRecord:
    """Config snapshot plus per-step losses and per-epoch validation metrics."""

    def __init__(self, cfg: TrainConfig):
        self.config = cfg.to_dict()
        self.steps: list[dict] = []
        self.val_reports: list[dict] = []
        self.wall_clock = 0.0
        self.source_fingerprint = _source_fingerprint()

    def to_json(self) -> str:
        return json.dumps({
            "config": self.config, "steps": self.steps,
            "val_reports": self.val_reports, "wall_clock": self.wall_clock,
            "source_fingerprint": self.source_fingerprint,
        }, indent=2, default=list)


def _source_fingerprint() -> str:
    pkg = Path(__file__).parent
    h = hashlib.sha256()
    for p in sorted(pkg.rglob("*.py")):
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


def build_extractor(cfg: TrainConfig) -> PerceptualExtractor:
    return PerceptualExtractor(
        provenance=cfg.perceptual_provenance,
        seed=cfg.seed,
        width_scale=cfg.perceptual_width_scale,
        weights_path=cfg.perceptual_weights_path or None)


@torch.no_grad()
def _validation_psnr(model: RirciModel, dataset: ManifestDataset,
                     indices: list[int]) -> float:
    model.eval()
    vals = []
    for i in indices:
        item = dataset[i]
        _, s2 = model.predict(item["J"])
        pred = s2.fused[0].permute(1, 2, 0).numpy()
        gt = item["I"][0].permute(1, 2, 0).numpy()
        vals.append(metrics.psnr(metrics.quantize_8bit(pred), gt))
    model.train()
    return float(np.mean(vals)) if vals else float("nan")


def _run_phase(model, params, dataset, train_idx, cfg, extractor, record,
               out, epochs, step_offset, mask_only: bool):
    """One training phase; returns (final step index, best val psnr, best path)."""
    opt = torch.optim.Adam(params, lr=cfg.learning_rate,
                           betas=(cfg.adam_beta1, cfg.adam_beta2))
    _, val_idx = dataset.split_indices(cfg.val_fraction, cfg.seed)
    best_psnr, best_path = -float("inf"), out / "best.pt"
    step = step_offset
    weights = cfg.loss_weights
    for epoch in range(epochs):
        for batch_ids, batch in batch_iterator(dataset, train_idx,
                                               cfg.batch_size, cfg.seed, epoch):
            if mask_only:
                # phase 1 of --two-phase: exclusion-stage terms only
                s1 = model.stage1(batch["J"])
                loss, breakdown = _stage1_loss(batch, s1, weights, extractor)
            else:
                s1, s2 = model(batch["J"])
                loss, breakdown = total_loss(batch, s1, s2, weights, extractor)
            if not torch.isfinite(loss):
                raise TrainingDiverged(step, batch_ids)
            opt.zero_grad()
            loss.backward()
            opt.step()
            record.steps.append({"step": step, **breakdown})
            step += 1
            if cfg.max_steps and step - step_offset >= cfg.max_steps:
                break
        if val_idx:
            psnr = _validation_psnr(model, dataset, val_idx)
            record.val_reports.append({"epoch": epoch, "psnr": psnr})
            if psnr > best_psnr:
                best_psnr = psnr
                save_checkpoint(model, best_path, extra={"val_psnr": psnr,
                                                         "epoch": epoch})
        if (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(model, out / "last.pt", extra={"epoch": epoch})
        if cfg.max_steps and step - step_offset >= cfg.max_steps:
            break
    return step, best_psnr, best_path


def _stage1_loss(batch, s1, w, extractor):
    from .losses import mask_bce, masked_l1, perceptual
    target = batch["I"] if s1.direct_prediction else batch["C_b"]
    loss_b = (w.lambda1 * masked_l1(s1.background_component, target, batch["M"])
              + w.lambda2 * perceptual(s1.background_component, target, extractor))
    loss_m = mask_bce(s1.mask, batch["M"])
    loss = loss_b + w.lambda3 * loss_m
    return loss, {"L_b": float(loss_b.detach()), "L_r": 0.0, "L_i": 0.0,
                  "L_f": 0.0, "L_m": float(loss_m.detach()),
                  "L": float(loss.detach())}


def train(cfg: TrainConfig) -> tuple[RunRecord, Path]:
    """Run training per config; returns the run record and best checkpoint path.

    Stage 1 and stage 2 are trained jointly end-to-end with the combined
    objective by default; ``two_phase`` first trains stage 1 alone on its
    own terms, then freezes it for the remaining epochs.
    """
    if not cfg.manifest:
        raise ValueError("config must point at a dataset manifest")
    torch.manual_seed(cfg.seed)
    np.random.seed(cfg.seed % (2 ** 32))

    dataset = ManifestDataset(cfg.manifest, split="train")
    if len(dataset) == 0:
        raise ValueError("training split is empty")
    train_idx, _ = dataset.split_indices(cfg.val_fraction, cfg.seed)

    model = RirciModel(cfg.model_config())
    model.train()
    extractor = build_extractor(cfg)

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    record = RunRecord(cfg)
    started = time.monotonic()

    try:
        if cfg.two_phase:
            half = max(1, cfg.epochs // 2)
            step, _, _ = _run_phase(model, model.stage1.parameters(), dataset,
                                    train_idx, cfg, extractor, record, out,
                                    half, 0, mask_only=True)
            for p in model.stage1.parameters():
                p.requires_grad_(False)
            _run_phase(model, model.stage2.parameters(), dataset, train_idx,
                       cfg, extractor, record, out, cfg.epochs - half, step,
                       mask_only=False)
        else:
            _run_phase(model, model.parameters(), dataset, train_idx, cfg,
                       extractor, record, out, cfg.epochs, 0, mask_only=False)
    finally:
        record.wall_clock = time.monotonic() - started
        (out / "run_record.json").write_text(record.to_json())

    save_checkpoint(model, out / "last.pt", extra={"final": True})
    best = out / "best.pt"
    if not best.exists():
        save_checkpoint(model, best, extra={"val_psnr": None})
    return record, best
