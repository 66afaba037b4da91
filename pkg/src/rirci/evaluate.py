"""Evaluation driver: run inference over a manifest split, score all metrics."""

from __future__ import annotations

import os

import torch

from . import metrics
from .data import ManifestDataset
from .imaging import from_nchw
from .model import ModelConfig, RirciModel, load_checkpoint

__all__ = ["evaluate"]


def evaluate(checkpoint: str | os.PathLike | RirciModel,
             manifest: str | os.PathLike, split: str = "test",
             out_dir: str | os.PathLike | None = None,
             buckets: bool = False, oracle_mode: bool = False,
             expected: ModelConfig | None = None
             ) -> tuple[metrics.MetricsReport, list[dict]]:
    """Score a checkpoint on every sample of a manifest split.

    ``oracle_mode`` scores the ground truth as its own prediction (perfect-
    predictor sanity path). Raises on an empty split rather than emitting
    an empty report.
    """
    if isinstance(checkpoint, RirciModel):
        model = checkpoint
    else:
        model, _ = load_checkpoint(checkpoint, expected=expected)
    model.eval()

    dataset = ManifestDataset(manifest, split=split, cache=False)
    if len(dataset) == 0:
        raise ValueError(f"split {split!r} is empty in {manifest}")

    per_sample = []
    for i in range(len(dataset)):
        item = dataset[i]
        entry = dataset.entry(i)
        gt = from_nchw(item["I"].numpy())
        gt_mask = from_nchw(item["M"].numpy())
        if oracle_mode:
            pred, pred_mask = gt, gt_mask
        else:
            with torch.no_grad():
                s1, s2 = model.predict(item["J"])
            pred = from_nchw(s2.fused.numpy())
            pred_mask = from_nchw(s1.mask.numpy())
        row = metrics.compute_sample_metrics(pred, gt, pred_mask, gt_mask)
        row["id"] = entry["id"]
        row["opacity"] = entry["spec"]["opacity"]
        per_sample.append(row)

    report = metrics.aggregate_reports(per_sample)
    if out_dir is not None:
        metrics.write_report(report, per_sample, out_dir, buckets=buckets)
    return report, per_sample
