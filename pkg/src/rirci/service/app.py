"""FastAPI application exposing watermark removal, metric scoring and
dataset synthesis over HTTP."""

from __future__ import annotations

import base64
import io
import os

import numpy as np
from fastapi import FastAPI, HTTPException
from PIL import Image

from .. import __version__, imaging, metrics, synthesis
from ..infer import run_model_on_image
from ..model import RirciModel, load_checkpoint
from .schemas import (HealthResponse, MetricsRequest, MetricsResponse,
                      RemoveRequest, RemoveResponse, SynthesizeRequest,
                      SynthesizeResponse)


def _decode_image(b64: str, field: str) -> np.ndarray:
    try:
        raw = base64.b64decode(b64, validate=True)
        img = Image.open(io.BytesIO(raw))
        img.load()
    except Exception as exc:
        raise HTTPException(422, f"{field}: not a decodable base64 image: {exc}")
    if img.mode != "RGB":
        img = img.convert("RGB")
    return np.asarray(img, dtype=np.float32) / 255.0


def _decode_mask(b64: str, field: str) -> np.ndarray:
    gray = _decode_image(b64, field).mean(axis=2, keepdims=True)
    return gray


def _encode_image(arr: np.ndarray) -> str:
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    data = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(data, mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


def create_app(checkpoint_path: str | os.PathLike | None = None,
               model: RirciModel | None = None) -> FastAPI:
    """Build the service; the checkpoint may also come from the
    RIRCI_CHECKPOINT environment variable."""
    app = FastAPI(title="rirci", version=__version__)
    checkpoint_path = checkpoint_path or os.environ.get("RIRCI_CHECKPOINT")
    if model is None and checkpoint_path:
        model, _ = load_checkpoint(checkpoint_path)
    app.state.model = model

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__,
                              checkpoint_loaded=app.state.model is not None)

    @app.post("/remove", response_model=RemoveResponse)
    def remove(req: RemoveRequest) -> RemoveResponse:
        if app.state.model is None:
            raise HTTPException(503, "no checkpoint loaded; start the service "
                                     "with a checkpoint or set RIRCI_CHECKPOINT")
        img = _decode_image(req.image_b64, "image_b64")
        outputs = run_model_on_image(app.state.model, img)
        intermediates = None
        if req.dump_intermediates:
            intermediates = {name: _encode_image(panel)
                             for name, panel in outputs.items() if name != "fused"}
        return RemoveResponse(image_b64=_encode_image(outputs["fused"]),
                              intermediates_b64=intermediates)

    @app.post("/metrics", response_model=MetricsResponse)
    def score(req: MetricsRequest) -> MetricsResponse:
        pred = _decode_image(req.pred_b64, "pred_b64")
        gt = _decode_image(req.gt_b64, "gt_b64")
        if pred.shape != gt.shape:
            raise HTTPException(422, "prediction and ground truth sizes differ")
        pred_q = imaging.quantize_8bit(pred)
        out = {"psnr": metrics.psnr(pred_q, gt), "ssim": metrics.ssim(pred_q, gt),
               "rmse": metrics.rmse(pred_q, gt)}
        if req.gt_mask_b64 is not None:
            gt_mask = _decode_mask(req.gt_mask_b64, "gt_mask_b64")
            try:
                out["rmse_w"] = metrics.rmse_w(pred_q, gt, gt_mask)
            except metrics.MetricUndefinedError:
                out["rmse_w"] = None
            if req.pred_mask_b64 is not None:
                pred_mask = _decode_mask(req.pred_mask_b64, "pred_mask_b64")
                out["f1"], out["iou"] = metrics.mask_f1_iou(
                    pred_mask, gt_mask, req.mask_threshold)
        return MetricsResponse(**out)

    @app.post("/synthesize", response_model=SynthesizeResponse)
    def synthesize(req: SynthesizeRequest) -> SynthesizeResponse:
        try:
            cfg = synthesis.SynthesisConfig(
                canvas=(req.canvas, req.canvas),
                opacity_range=(req.opacity_low, req.opacity_high),
                count=req.count, seed=req.seed, split=req.split)
            manifest = synthesis.generate_dataset(
                req.backgrounds_dir, req.watermarks_dir, cfg, req.out_dir)
        except (synthesis.SynthesisConfigError, ValueError) as exc:
            raise HTTPException(422, str(exc))
        except (FileNotFoundError, OSError) as exc:
            raise HTTPException(400, str(exc))
        return SynthesizeResponse(
            manifest_path=os.path.join(req.out_dir, "manifest.json"),
            counts=manifest.counts,
            opacity_range=manifest.opacity_range,
            rng_seed=manifest.rng_seed)

    return app
