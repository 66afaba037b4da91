"""Quantitative evaluation: PSNR, SSIM, RMSE, masked RMSE, mask F1/IoU.

All image metrics operate on the 0-255 scale; predictions are rounded
through 8 bits first so measurements match what a saved file would score.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imaging import quantize_8bit

__all__ = ["MetricUndefinedError", "MetricsReport", "psnr", "ssim", "rmse",
           "rmse_w", "mask_f1_iou", "compute_sample_metrics",
    "aggregate_reports", "write_report", "OPACITY_BUCKETS"]

PSNR_CAP_DB = 100.0
OPACITY_BUCKETS = ((0.1, 0.4), (0.4, 0.7), (0.7, 1.0))

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


class MetricUndefinedError(ValueError):
    """Raised when a metric has no defined value (e.g. empty mask RMSE)."""


def _check_shapes(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")


def _to_255(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) * 255.0


def psnr(x: np.ndarray, y: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB, capped at 100 for near-zero error."""
    _check_shapes(x, y)
    mse = float(np.mean((_to_255(x) - _to_255(y)) ** 2))
    if mse < 1e-10:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(255.0 ** 2 / mse))


def _gaussian_kernel() -> np.ndarray:
    half = (_SSIM_WINDOW - 1) / 2
    coords = np.arange(_SSIM_WINDOW) - half
    g = np.exp(-(coords ** 2) / (2 * _SSIM_SIGMA ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(x: np.ndarray, y: np.ndarray) -> float:
    """Single-scale structural similarity, 11x11 Gaussian window, sigma 1.5,
    K1=0.01, K2=0.03, dynamic range 255; averaged over valid window
    positions and channels."""
    _check_shapes(x, y)
    if min(x.shape[0], x.shape[1]) < _SSIM_WINDOW:
        raise ValueError(f"image smaller than the {_SSIM_WINDOW}x{_SSIM_WINDOW} window")
    xf, yf = _to_255(x), _to_255(y)
    kernel = _gaussian_kernel()
    c1 = (_SSIM_K1 * 255.0) ** 2
    c2 = (_SSIM_K2 * 255.0) ** 2
    half = _SSIM_WINDOW // 2

    def filt(a):
        out = ndimage.correlate(a, kernel, mode="constant")
        return out[half:-half, half:-half]

    vals = []
    for c in range(x.shape[2]):
        a, b = xf[..., c], yf[..., c]
        mu_a, mu_b = filt(a), filt(b)
        var_a = filt(a * a) - mu_a ** 2
        var_b = filt(b * b) - mu_b ** 2
        cov = filt(a * b) - mu_a * mu_b
        num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
        den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def rmse(x: np.ndarray, y: np.ndarray) -> float:
    """Root-mean-square error on the 0-255 scale over all pixels."""
    _check_shapes(x, y)
    return float(np.sqrt(np.mean((_to_255(x) - _to_255(y)) ** 2)))


def rmse_w(x: np.ndarray, y: np.ndarray, m: np.ndarray) -> float:
    """RMSE restricted to pixels where the mask is 1 (normalized by masked
    pixel count times channels)."""
    _check_shapes(x, y)
    inside = np.asarray(m)[..., 0] > 0.5
    if not inside.any():
        raise MetricUndefinedError("masked RMSE is undefined for an empty mask")
    diff = _to_255(x)[inside] - _to_255(y)[inside]
    return float(np.sqrt(np.mean(diff ** 2)))


def mask_f1_iou(pred: np.ndarray, target: np.ndarray,
                threshold: float = 0.5) -> tuple[float, float]:
    """F1 and IoU of the binarized predicted mask; both are 1 when the
    prediction and target are both empty."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    p = np.asarray(pred) > threshold
    t = np.asarray(target) > 0.5
    tp = float(np.sum(p & t))
    fp = float(np.sum(p & ~t))
    fn = float(np.sum(~p & t))
    if tp + fp + fn == 0:
        return 1.0, 1.0
    f1 = 2 * tp / (2 * tp + fp + fn)
    iou = tp / (tp + fp + fn)
    return float(f1), float(iou)


@dataclass
class MetricsReport:
    psnr: float
    ssim: float
    rmse: float
    rmse_w: float | None  # None when every sample's mask was empty
    f1: float
    iou: float
    sample_count: int

    def to_dict(self) -> dict:
        return {"psnr": self.psnr, "ssim": self.ssim, "rmse": self.rmse,
                "rmse_w": self.rmse_w, "f1": self.f1, "iou": self.iou,
                "sample_count": self.sample_count}


def compute_sample_metrics(pred: np.ndarray, gt: np.ndarray,
                           pred_mask: np.ndarray, gt_mask: np.ndarray,
                           threshold: float = 0.5) -> dict:
    """All six metrics for one sample; the prediction is 8-bit rounded first."""
    pred_q = quantize_8bit(pred)
    f1, iou = mask_f1_iou(pred_mask, gt_mask, threshold)
    try:
        w = rmse_w(pred_q, gt, gt_mask)
    except MetricUndefinedError:
        w = None
    return {"psnr": psnr(pred_q, gt), "ssim": ssim(pred_q, gt),
            "rmse": rmse(pred_q, gt), "rmse_w": w, "f1": f1, "iou": iou}


def aggregate_reports(per_sample: list[dict]) -> MetricsReport:
    """Arithmetic-mean aggregation in fixed sample order; samples with an
    undefined masked RMSE are excluded from that mean only."""
    if not per_sample:
        raise ValueError("cannot aggregate an empty sample list")
    mean = lambda key: float(np.mean([s[key] for s in per_sample]))
    w_vals = [s["rmse_w"] for s in per_sample if s["rmse_w"] is not None]
    return MetricsReport(
        psnr=mean("psnr"), ssim=mean("ssim"), rmse=mean("rmse"),
        rmse_w=float(np.mean(w_vals)) if w_vals else None,
        f1=mean("f1"), iou=mean("iou"), sample_count=len(per_sample))


def bucket_psnr(per_sample: list[dict]) -> dict[str, float | None]:
    """Mean PSNR per opacity bucket; samples need an 'opacity' key."""
    out: dict[str, float | None] = {}
    for lo, hi in OPACITY_BUCKETS:
        vals = [s["psnr"] for s in per_sample
                if "opacity" in s and lo <= s["opacity"] < hi]
        out[f"[{lo},{hi})"] = float(np.mean(vals)) if vals else None
    return out


def write_report(report: MetricsReport, per_sample: list[dict],
                 out_dir: str | os.PathLike, buckets: bool = False) -> None:
    """Emit report.json plus a per-sample CSV (and optional opacity table)."""
    out = os.fspath(out_dir)
    os.makedirs(out, exist_ok=True)
    payload = report.to_dict()
    if buckets:
        payload["psnr_by_opacity"] = bucket_psnr(per_sample)
    with open(os.path.join(out, "report.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    with open(os.path.join(out, "per_sample.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "psnr", "ssim", "rmse", "rmse_w", "f1", "iou"])
        for s in per_sample:
            writer.writerow([s.get("id", ""), s["psnr"], s["ssim"], s["rmse"],
                             "" if s["rmse_w"] is None else s["rmse_w"],
                             s["f1"], s["iou"]])
