"""Pydantic request/response models for the HTTP service.

Images travel as base64-encoded PNG bytes inside JSON bodies.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str
    checkpoint_loaded: bool


class RemoveRequest(BaseModel):
    image_b64: str = Field(description="base64-encoded PNG of the watermarked image")
    dump_intermediates: bool = False


class RemoveResponse(BaseModel):
    image_b64: str
    intermediates_b64: dict[str, str] | None = None


class MetricsRequest(BaseModel):
    pred_b64: str
    gt_b64: str
    pred_mask_b64: str | None = None
    gt_mask_b64: str | None = None
    mask_threshold: float = 0.5


class MetricsResponse(BaseModel):
    psnr: float
    ssim: float
    rmse: float
    rmse_w: float | None = None
    f1: float | None = None
    iou: float | None = None


class SynthesizeRequest(BaseModel):
    backgrounds_dir: str
    watermarks_dir: str
    out_dir: str
    count: int = Field(gt=0)
    opacity_low: float = 0.5
    opacity_high: float = 1.0
    seed: int = 0
    canvas: int = 256
    split: str = "train"


class SynthesizeResponse(BaseModel):
    manifest_path: str
    counts: dict[str, int]
    opacity_range: tuple[float, float]
    rng_seed: int
