"""Watermark component exclusion network.

A U-shape encoder-decoder with a shared decoding trunk and two heads: an
iteratively refined soft watermark mask, and the watermark component whose
decoder features are gated by the current mask. The background component
is then derived (not learned) through the identity

    background = input - mask * watermark_component
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import ResidualConvBlock

__all__ = ["Stage1Config", "Stage1Output", "Stage1Net"]


@dataclass
class Stage1Config:
    widths: tuple[int, ...] = (32, 64, 128, 256, 512)
    refinement_steps: int = 3
    # ablation: the component branch predicts the watermark-free image
    # directly instead of the watermark component
    predict_image: bool = False

    def __post_init__(self):
        if len(self.widths) != 5:
            raise ValueError("encoder needs exactly 5 stage widths")


@dataclass
class Stage1Output:
    """Predictions of the exclusion stage (all N,C,H,W tensors)."""

    mask_logits: torch.Tensor          # (N, 1, H, W), pre-sigmoid
    mask: torch.Tensor                 # sigmoid(mask_logits)
    watermark_component: torch.Tensor  # (N, 3, H, W) in [0, 1]
    background_component: torch.Tensor
    direct_prediction: bool = False
    intermediate_masks: list = field(default_factory=list)


class _Down(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1)
        self.res = ResidualConvBlock(c_out)

    def forward(self, x):
        return self.res(self.conv(x))


class _Up(nn.Module):
    """Nearest-neighbor upsample + conv (avoids checkerboard artifacts)."""

    def __init__(self, c_in: int, c_skip: int, c_out: int):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.merge = nn.Conv2d(c_out + c_skip, c_out, 3, padding=1)
        self.res = ResidualConvBlock(c_out)

    def forward(self, x, skip):
        x = self.conv(F.interpolate(x, size=skip.shape[-2:], mode="nearest"))
        return self.res(self.merge(torch.cat([x, skip], dim=1)))


class _MaskRefineUnit(nn.Module):
    """One coarse-to-fine step: [features, current mask] -> residual logits."""

    def __init__(self, feat_ch: int):
        super().__init__()
        self.conv1 = nn.Conv2d(feat_ch + 1, feat_ch, 3, padding=1)
        self.conv2 = nn.Conv2d(feat_ch, 1, 3, padding=1)

    def forward(self, feat, mask):
        return self.conv2(F.gelu(self.conv1(torch.cat([feat, mask], dim=1))))


class Stage1Net(nn.Module):
    """U-shape exclusion model; input spatial dims must be divisible by 16."""

    def __init__(self, cfg: Stage1Config | None = None):
        super().__init__()
        self.cfg = cfg or Stage1Config()
        w = self.cfg.widths

        self.stem = _Down(3, w[0], stride=1)
        self.downs = nn.ModuleList(
            _Down(w[k], w[k + 1], stride=2) for k in range(4))

        self.ups = nn.ModuleList(
            _Up(w[k + 1], w[k], w[k]) for k in reversed(range(4)))
        self.bottleneck = ResidualConvBlock(w[4])

        self.mask_init = nn.Conv2d(w[0], 1, 1)
        self.refiners = nn.ModuleList(
            _MaskRefineUnit(w[0]) for _ in range(self.cfg.refinement_steps))

        self.comp_convs = nn.ModuleList([
            nn.Conv2d(w[2], w[2], 3, padding=1),
            nn.Conv2d(w[1], w[1], 3, padding=1),
            nn.Conv2d(w[0], w[0], 3, padding=1),
        ])
        self.comp_ups = nn.ModuleList([
            nn.Conv2d(w[2], w[1], 3, padding=1),
            nn.Conv2d(w[1], w[0], 3, padding=1),
        ])
        self.comp_out = nn.Conv2d(w[0], 3, 1)

    def encode(self, x: torch.Tensor) -> list[torch.Tensor]:
        """Five-level feature pyramid; level k has spatial size (H/2^k, W/2^k)."""
        h, w = x.shape[-2:]
        if h % 16 or w % 16:
            raise ValueError(f"input spatial dims must be divisible by 16, got {h}x{w}")
        feats = [self.stem(x)]
        for down in self.downs:
            feats.append(down(feats[-1]))
        return feats

    def _decode(self, feats: list[torch.Tensor]) -> list[torch.Tensor]:
        """Shared decoding trunk; returns decoded maps [d3, d2, d1, d0]."""
        x = self.bottleneck(feats[4])
        decoded = []
        for up, skip in zip(self.ups, reversed(feats[:4])):
            x = up(x, skip)
            decoded.append(x)
        return decoded

    def forward(self, j: torch.Tensor) -> Stage1Output:
        feats = self.encode(j)
        d3, d2, d1, d0 = self._decode(feats)

        logits = self.mask_init(d0)
        intermediates = []
        for refiner in self.refiners:
            mask = torch.sigmoid(logits)
            intermediates.append(mask)
            logits = logits + refiner(d0, mask)
        mask = torch.sigmoid(logits)

        def gate(feat):
            m = F.interpolate(mask, size=feat.shape[-2:], mode="bilinear",
                              align_corners=False)
            return feat * m

        c = gate(F.gelu(self.comp_convs[0](d2)))
        c = F.gelu(self.comp_ups[0](F.interpolate(c, size=d1.shape[-2:], mode="nearest")))
        c = c + gate(F.gelu(self.comp_convs[1](d1)))
        c = F.gelu(self.comp_ups[1](F.interpolate(c, size=d0.shape[-2:], mode="nearest")))
        c = c + gate(F.gelu(self.comp_convs[2](d0)))
        branch = torch.sigmoid(self.comp_out(c))

        if self.cfg.predict_image:
            # ablation: the branch output *is* the watermark-free image
            return Stage1Output(mask_logits=logits, mask=mask,
                                watermark_component=branch,
                                background_component=branch,
                                direct_prediction=True,
                                intermediate_masks=intermediates)

        background = j - mask * branch
        return Stage1Output(mask_logits=logits, mask=mask,
                            watermark_component=branch,
                            background_component=background,
                            intermediate_masks=intermediates)
