"""Training objective.

Five terms supervise the two stages: the excluded background component,
each restoration path (with complementary opacity-thresholded masks), the
fused output, and the watermark mask. All norms are mean-normalized per
element so the trade-off weights keep their meaning across resolutions.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .stage1 import Stage1Output
from .stage2 import Stage2Output

__all__ = ["LossWeights", "PerceptualExtractor", "l1", "masked_l1",
           "perceptual", "mask_bce", "total_loss"]

BCE_EPS = 1e-7

# torchvision VGG16 'features' conv indices for the three stages preceding
# the first three pooling layers
_VGG_PLAN = ((64, 64), (128, 128), (256, 256, 256))
_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass
class LossWeights:
    lambda1: float = 2.0
    lambda2: float = 1.0
    lambda3: float = 3.0
    gamma: float = 1.5
    alpha_threshold: float = 0.75

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3, self.gamma) < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0.0 < self.alpha_threshold < 1.0:
            raise ValueError("alpha_threshold must lie in (0, 1)")


class PerceptualExtractor(nn.Module):
    """Frozen three-stage feature extractor for the perceptual loss.

    ``provenance='pretrained'`` loads published VGG16 classification
    weights from a local state-dict file (no download); the three stages
    are the feature maps preceding the first three pooling layers.
    ``provenance='fixed-seed-random'`` builds the same topology with
    seeded random frozen weights, for fully hermetic tests. ``width_scale``
    shrinks channel widths (random provenance only) for CPU-sized runs.
    """

    def __init__(self, provenance: str = "fixed-seed-random", seed: int = 0,
                 width_scale: float = 1.0, weights_path: str | None = None):
        super().__init__()
        if provenance not in ("pretrained", "fixed-seed-random"):
            raise ValueError(f"unknown provenance {provenance!r}")
        if provenance == "pretrained" and width_scale != 1.0:
            raise ValueError("pretrained weights require width_scale=1.0")
        self.provenance = provenance
        self.seed = seed
        self.width_scale = width_scale
        if provenance == "pretrained":
            mean, std = _IMAGENET_MEAN, _IMAGENET_STD
        else:
            mean, std = (0.5, 0.5, 0.5), (0.5, 0.5, 0.5)
        self.register_buffer("mean", torch.tensor(mean).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(std).view(1, 3, 1, 1))

        gen = torch.Generator().manual_seed(seed)
        stages = []
        c_in = 3
        for i, widths in enumerate(_VGG_PLAN):
            # ceil_mode keeps 1x1 maps alive so tiny fixtures stay valid
            layers: list[nn.Module] = [] if i == 0 else \
                [nn.MaxPool2d(2, ceil_mode=True)]
            for w in widths:
                c_out = max(4, int(round(w * width_scale)))
                conv = nn.Conv2d(c_in, c_out, 3, padding=1)
                with torch.no_grad():
                    nn.init.normal_(conv.weight, std=0.05, generator=gen)
                    nn.init.zeros_(conv.bias)
                layers += [conv, nn.ReLU(inplace=False)]
                c_in = c_out
            stages.append(nn.Sequential(*layers))
        self.stages = nn.ModuleList(stages)

        if provenance == "pretrained":
            if weights_path is None:
                raise ValueError("pretrained provenance requires weights_path")
            self._load_vgg16_features(weights_path)

        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def _load_vgg16_features(self, path: str) -> None:
        state = torch.load(path, map_location="cpu", weights_only=True)
        # torchvision layout: features.{0,2}=stage1, {5,7}=stage2, {10,12,14}=stage3
        indices = ((0, 2), (5, 7), (10, 12, 14))
        with torch.no_grad():
            for stage, idxs in zip(self.stages, indices):
                convs = [m for m in stage if isinstance(m, nn.Conv2d)]
                for conv, i in zip(convs, idxs):
                    conv.weight.copy_(state[f"features.{i}.weight"])
                    conv.bias.copy_(state[f"features.{i}.bias"])

    @property
    def provenance_record(self) -> dict:
        return {
            "provenance": self.provenance,
            "seed": self.seed,
            "width_scale": self.width_scale,
            "mean": self.mean.flatten().tolist(),
            "std": self.std.flatten().tolist(),
        }

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        x = (x - self.mean.to(x.dtype)) / self.std.to(x.dtype)
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


def l1(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference over all elements."""
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    return (x - y).abs().mean()


def masked_l1(x: torch.Tensor, y: torch.Tensor, m: torch.Tensor) -> torch.Tensor:
    """Mean of |m * (x - y)| over all elements (same normalizer as `l1`)."""
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    return (m * (x - y)).abs().mean()


def perceptual(x: torch.Tensor, y: torch.Tensor,
               extractor: PerceptualExtractor) -> torch.Tensor:
    """Sum over the three stages of mean absolute feature differences."""
    fx, fy = extractor(x), extractor(y)
    return sum((a - b).abs().mean() for a, b in zip(fx, fy))


def mask_bce(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Per-pixel binary cross-entropy, mean-normalized; pred is clamped to
    [eps, 1-eps] first."""
    p = pred.clamp(BCE_EPS, 1.0 - BCE_EPS)
    return -(target * p.log() + (1.0 - target) * (1.0 - p).log()).mean()


def total_loss(batch: dict[str, torch.Tensor], s1: Stage1Output,
               s2: Stage2Output, w: LossWeights,
               extractor: PerceptualExtractor) -> tuple[torch.Tensor, dict[str, float]]:
    """Assemble the full objective.

    ``batch`` must hold ground truth J, I, C_b, A, M as (N,C,H,W) tensors;
    synthetic supervision (A) is required for the opacity-thresholded
    terms. Returns (scalar loss, per-term breakdown for logging).
    """
    for key in ("I", "C_b", "A", "M"):
        if key not in batch:
            raise ValueError(f"training batch is missing ground-truth {key!r}")
    I, C_b, A, M = batch["I"], batch["C_b"], batch["A"], batch["M"]

    def image_term(pred, target, weight_mask):
        return (w.lambda1 * (masked_l1(pred, target, weight_mask)
                             + w.gamma * l1(pred, target))
                + w.lambda2 * perceptual(pred, target, extractor))

    cb_target = I if s1.direct_prediction else C_b
    loss_b = (w.lambda1 * masked_l1(s1.background_component, cb_target, M)
              + w.lambda2 * perceptual(s1.background_component, cb_target, extractor))

    zero = torch.zeros((), dtype=I.dtype, device=I.device)
    # strict thresholds: pixels with A == alpha get weight only from the
    # gamma-weighted full-image term
    loss_r = (image_term(s2.restored, I, M * (A > w.alpha_threshold).to(A.dtype))
              if s2.restored is not None else zero)
    loss_i = (image_term(s2.imagined, I, M * (A < w.alpha_threshold).to(A.dtype))
              if s2.imagined is not None else zero)
    loss_f = image_term(s2.fused, I, M)
    loss_m = mask_bce(s1.mask, M)

    total = loss_b + loss_r + loss_i + loss_f + w.lambda3 * loss_m
    item = lambda t: float(t.detach())
    breakdown = {
        "L_b": item(loss_b), "L_r": item(loss_r), "L_i": item(loss_i),
        "L_f": item(loss_f), "L_m": item(loss_m), "L": item(total),
    }
    return total, breakdown
