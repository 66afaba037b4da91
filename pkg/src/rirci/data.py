"""Manifest-backed dataset loading and deterministic batching."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import torch

from . import imaging, synthesis

__all__ = ["ManifestDataset", "sample_to_tensors", "collate", "batch_iterator"]


def sample_to_tensors(sample: synthesis.Sample) -> dict[str, torch.Tensor]:
    """Supervision tuple -> dict of (1,C,H,W) float32 tensors."""
    out = {}
    for key in ("J", "I", "C_w", "C_b"):
        out[key] = torch.from_numpy(imaging.to_nchw(getattr(sample, key)))
    out["A"] = torch.from_numpy(imaging.to_nchw(sample.A))
    out["M"] = torch.from_numpy(imaging.to_nchw(sample.M))
    return out


def collate(items: list[dict[str, torch.Tensor]]) -> dict[str, torch.Tensor]:
    return {k: torch.cat([it[k] for it in items], dim=0) for k in items[0]}


class ManifestDataset:
    """Samples referenced by a dataset manifest, optionally cached in memory."""

    def __init__(self, manifest_path: str | os.PathLike, split: str | None = None,
                 cache: bool = True):
        self.root = Path(manifest_path).parent
        self.manifest = synthesis.load_manifest(manifest_path)
        self.entries = [e for e in self.manifest.entries
                        if split is None or e["split"] == split]
        self.cache = cache
        self._cached: dict[int, dict[str, torch.Tensor]] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def entry(self, index: int) -> dict:
        return self.entries[index]

    def __getitem__(self, index: int) -> dict[str, torch.Tensor]:
        if index in self._cached:
            return self._cached[index]
        item = sample_to_tensors(synthesis.load_sample(self.entries[index], self.root))
        if self.cache:
            self._cached[index] = item
        return item

    def split_indices(self, val_fraction: float, seed: int) -> tuple[list[int], list[int]]:
        """Deterministic train/validation index split."""
        n = len(self)
        order = np.random.default_rng([seed, 917]).permutation(n)
        n_val = max(1, int(round(n * val_fraction))) if val_fraction > 0 and n > 1 else 0
        val = sorted(int(i) for i in order[:n_val])
        train = sorted(int(i) for i in order[n_val:])
        return train, val


def batch_iterator(dataset: ManifestDataset, indices: list[int], batch_size: int,
                   seed: int, epoch: int, shuffle: bool = True):
    """Yield collated batches in a seeded, reproducible order."""
    idx = list(indices)
    if shuffle:
        rng = np.random.default_rng([seed, epoch])
        idx = [idx[i] for i in rng.permutation(len(idx))]
    for start in range(0, len(idx), batch_size):
        chunk = idx[start:start + batch_size]
        yield chunk, collate([dataset[i] for i in chunk])
