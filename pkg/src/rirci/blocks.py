"""Differentiable operators shared by both networks.

Contains the local/global axis-MLPs, the frequency-domain transform, the
concurrent spatial+channel gating block, the composed global/local context
interaction (GLCI) block, a frequency-convolution residual block used as an
ablation stand-in, residual conv blocks, and the non-local self-attention
block.

All blocks map (N, C, H, W) -> (N, C, H, W), are dtype-agnostic (float32 or
float64), and use batch-independent normalization so single-sample inference
matches training behavior. Non-divisible spatial sizes are reflection-padded
before partitioning and cropped afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange

__all__ = [
    "GlciConfig",
    "LocalMlp",
    "GlobalMlp",
    "SpectralTransform",
    "SCSEBlock",
    "GlciBlock",
    "FfcBlock",
    "NonLocalBlock",
    "ResidualConvBlock",
    "block_info",
    "zero_all_biases",
]


@dataclass(frozen=True)
class GlciConfig:
    channels: int
    local_block: tuple[int, int] = (8, 8)
    global_grid: tuple[int, int] = (8, 8)
    hidden_ratio: int = 2
    use_spectral: bool = True   # local -> global propagation (False: conv 3x3)
    use_scse: bool = True       # global -> local propagation (False: conv 3x3)

    def __post_init__(self):
        if self.channels % 2 != 0:
            raise ValueError(f"GLCI channel count must be even, got {self.channels}")


def _pad_to_multiple(x: torch.Tensor, mh: int, mw: int) -> tuple[torch.Tensor, tuple[int, int]]:
    h, w = x.shape[-2:]
    ph = (mh - h % mh) % mh
    pw = (mw - w % mw) % mw
    if ph or pw:
        mode = "reflect" if (ph < h and pw < w) else "replicate"
        x = F.pad(x, (0, pw, 0, ph), mode=mode)
    return x, (ph, pw)


def _crop(x: torch.Tensor, pad: tuple[int, int]) -> torch.Tensor:
    ph, pw = pad
    if ph:
        x = x[..., :-ph, :]
    if pw:
        x = x[..., :, :-pw]
    return x


class LocalMlp(nn.Module):
    """Mixes feature values along the intra-patch spatial axis.

    The feature map is split into non-overlapping ``block`` patches; patch
    positions are flattened into the mixing dimension of a two-layer
    perceptron whose weights are shared across patches and channels.
    Residual, so zero-initializing the second layer gives an identity map.
    """

    def __init__(self, channels: int, block: tuple[int, int] = (8, 8),
                 hidden_ratio: int = 2):
        super().__init__()
        self.block = block
        p = block[0] * block[1]
        self.fc1 = nn.Linear(p, p * hidden_ratio)
        self.fc2 = nn.Linear(p * hidden_ratio, p)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        bh, bw = self.block
        xp, pad = _pad_to_multiple(x, bh, bw)
        u = rearrange(xp, "n c (gh bh) (gw bw) -> n c gh gw (bh bw)", bh=bh, bw=bw)
        u = self.fc2(F.gelu(self.fc1(u)))
        u = rearrange(u, "n c gh gw (bh bw) -> n c (gh bh) (gw bw)", bh=bh, bw=bw)
        return _crop(xp + u, pad)

    def num_patches(self, h: int, w: int) -> int:
        bh, bw = self.block
        return -(-h // bh) * (-(-w // bw))


class GlobalMlp(nn.Module):
    """Mixes corresponding positions across the cells of a spatial grid.

    The feature map is split into a ``grid`` of equally sized cells; the
    cell index is the mixing dimension, so dependencies span distant local
    regions. Residual, identity under zero-initialized second layer.
    """

    def __init__(self, channels: int, grid: tuple[int, int] = (8, 8),
                 hidden_ratio: int = 2):
        super().__init__()
        self.grid = grid
        g = grid[0] * grid[1]
        self.fc1 = nn.Linear(g, g * hidden_ratio)
        self.fc2 = nn.Linear(g * hidden_ratio, g)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        gh, gw = self.grid
        xp, pad = _pad_to_multiple(x, gh, gw)
        u = rearrange(xp, "n c (gh ch) (gw cw) -> n c ch cw (gh gw)", gh=gh, gw=gw)
        u = self.fc2(F.gelu(self.fc1(u)))
        u = rearrange(u, "n c ch cw (gh gw) -> n c (gh ch) (gw cw)", gh=gh, gw=gw)
        return _crop(xp + u, pad)

    def num_patches(self) -> int:
        return self.grid[0] * self.grid[1]


class SpectralTransform(nn.Module):
    """Frequency-domain convolution with an image-wide receptive field.

    Real-to-complex FFT over H x W, real/imag stacked along channels, a 1x1
    conv + per-channel normalization + GELU in the frequency domain, then
    the inverse transform back to a real map of the input shape.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(2 * channels, 2 * channels, kernel_size=1)
        self.norm = nn.GroupNorm(1, 2 * channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if not torch.isfinite(x).all():
            raise FloatingPointError("non-finite input to spectral transform")
        freq = torch.fft.rfft2(x, norm="ortho")
        f = torch.cat([freq.real, freq.imag], dim=1)
        f = F.gelu(self.norm(self.conv(f)))
        real, imag = torch.chunk(f, 2, dim=1)
        return torch.fft.irfft2(torch.complex(real, imag), s=x.shape[-2:],
                                norm="ortho")


class SCSEBlock(nn.Module):
    """Concurrent spatial and channel squeeze-and-excitation.

    Channel branch: global average pool -> bottleneck -> sigmoid gates per
    channel. Spatial branch: 1x1 conv -> sigmoid gates per position. The
    two recalibrated maps are summed, so outputs are bounded by 2*max|F|.
    """

    def __init__(self, channels: int, reduction: int = 2):
        super().__init__()
        mid = max(1, channels // reduction)
        self.c_fc1 = nn.Conv2d(channels, mid, kernel_size=1)
        self.c_fc2 = nn.Conv2d(mid, channels, kernel_size=1)
        self.s_conv = nn.Conv2d(channels, 1, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        pooled = x.mean(dim=(2, 3), keepdim=True)
        c_gate = torch.sigmoid(self.c_fc2(F.gelu(self.c_fc1(pooled))))
        s_gate = torch.sigmoid(self.s_conv(x))
        return x * c_gate + x * s_gate


class GlciBlock(nn.Module):
    """Global and local context interaction.

    Channels split 50/50 into a local and a global half. The local half
    runs the intra-patch MLP, the global half the cross-cell MLP. The
    frequency transform of the local features is added into the global
    branch; gated global features are added into the local branch. Branch
    outputs are concatenated, fused by a 1x1 conv, and added residually.

    ``use_scse=False`` / ``use_spectral=False`` swap the respective
    propagation path for a plain 3x3 convolution (ablation variants).
    """

    def __init__(self, cfg: GlciConfig):
        super().__init__()
        self.cfg = cfg
        half = cfg.channels // 2
        self.local_mlp = LocalMlp(half, cfg.local_block, cfg.hidden_ratio)
        self.global_mlp = GlobalMlp(half, cfg.global_grid, cfg.hidden_ratio)
        if cfg.use_spectral:
            self.local_to_global = SpectralTransform(half)
        else:
            self.local_to_global = nn.Conv2d(half, half, 3, padding=1)
        if cfg.use_scse:
            self.global_to_local = SCSEBlock(half)
        else:
            self.global_to_local = nn.Conv2d(half, half, 3, padding=1)
        self.fuse = nn.Conv2d(cfg.channels, cfg.channels, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.cfg.channels:
            raise ValueError(f"expected {self.cfg.channels} channels, got {x.shape[1]}")
        x_l, x_g = torch.chunk(x, 2, dim=1)
        loc = self.local_mlp(x_l)
        glo = self.global_mlp(x_g)
        glo = glo + self.local_to_global(loc)
        loc = loc + self.global_to_local(glo)
        return x + self.fuse(torch.cat([loc, glo], dim=1))


class FfcBlock(nn.Module):
    """Frequency-convolution residual block (inpainting-style stand-in).

    Used by the ablation that swaps the interaction block for a plain
    local-conv + spectral two-branch residual unit.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.local1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.local2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.spectral = SpectralTransform(channels)
        self.fuse = nn.Conv2d(2 * channels, channels, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        loc = self.local2(F.gelu(self.local1(x)))
        glo = self.spectral(x)
        return x + self.fuse(torch.cat([loc, glo], dim=1))


class NonLocalBlock(nn.Module):
    """Embedded-Gaussian self-attention over all spatial positions.

    Pairwise affinities are softmax-normalized per query position; value
    projections are aggregated and added residually through an output
    projection.
    """

    def __init__(self, channels: int):
        super().__init__()
        mid = max(1, channels // 2)
        self.mid = mid
        self.theta = nn.Conv2d(channels, mid, kernel_size=1)
        self.phi = nn.Conv2d(channels, mid, kernel_size=1)
        self.g = nn.Conv2d(channels, mid, kernel_size=1)
        self.out = nn.Conv2d(mid, channels, kernel_size=1)

    def attention(self, x: torch.Tensor) -> torch.Tensor:
        """Per-query softmax attention map of shape (N, HW, HW)."""
        n = x.shape[0]
        q = self.theta(x).reshape(n, self.mid, -1)
        k = self.phi(x).reshape(n, self.mid, -1)
        return torch.softmax(torch.einsum("ncq,nck->nqk", q, k), dim=2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n, _, h, w = x.shape
        attn = self.attention(x)
        v = self.g(x).reshape(n, self.mid, -1)
        y = torch.einsum("nqk,nck->ncq", attn, v).reshape(n, self.mid, h, w)
        return x + self.out(y)


class ResidualConvBlock(nn.Module):
    """3x3 conv residual unit with per-channel normalization."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm1 = nn.GroupNorm(1, channels)
        self.norm2 = nn.GroupNorm(1, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = F.gelu(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        return F.gelu(x + y)


def block_info(module: nn.Module) -> dict:
    """Parameter-count and config introspection record for checkpoint checks."""
    info = {
        "type": type(module).__name__,
        "parameters": sum(p.numel() for p in module.parameters()),
    }
    cfg = getattr(module, "cfg", None)
    if cfg is not None:
        info["config"] = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
    return info


def zero_all_biases(module: nn.Module) -> nn.Module:
    """Zero every bias and normalization shift in-place (test helper)."""
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear, nn.GroupNorm)) and m.bias is not None:
                m.bias.zero_()
    return module
