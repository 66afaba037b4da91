"""Single-image inference: remove a watermark, optionally dump intermediates."""

from __future__ import annotations

import os

import numpy as np
import torch
import torch.nn.functional as F

from . import imaging
from .model import RirciModel, load_checkpoint

__all__ = ["remove_watermark", "run_model_on_image", "INTERMEDIATE_PANELS"]

# the six-panel intermediates layout: mask, watermark component, background
# component, restored, imagined, fused
INTERMEDIATE_PANELS = ("mask", "watermark_component", "background_component",
                       "restored", "imagined", "fused")


def _pad_to_16(t: torch.Tensor) -> tuple[torch.Tensor, tuple[int, int]]:
    h, w = t.shape[-2:]
    ph = (16 - h % 16) % 16
    pw = (16 - w % 16) % 16
    if ph or pw:
        t = F.pad(t, (0, pw, 0, ph), mode="reflect")
    return t, (ph, pw)


def run_model_on_image(model: RirciModel, img: np.ndarray) -> dict[str, np.ndarray]:
    """Forward an (H, W, 3) image through both stages.

    Arbitrary sizes are accepted: input is reflection-padded to a multiple
    of 16 and predictions are cropped back. Returns the six intermediates
    as (H, W, C) unit-range arrays (absent ablation paths fall back to the
    fused output).
    """
    t = torch.from_numpy(imaging.to_nchw(img.astype(np.float32)))
    t, (ph, pw) = _pad_to_16(t)
    model.eval()
    s1, s2 = model.predict(t)

    def crop(x: torch.Tensor) -> np.ndarray:
        h, w = x.shape[-2:]
        x = x[..., :h - ph or None, :w - pw or None]
        return imaging.from_nchw(x.numpy())

    fused = crop(s2.fused)
    return {
        "mask": crop(s1.mask),
        "watermark_component": crop(s1.watermark_component),
        "background_component": crop(s1.background_component),
        "restored": crop(s2.restored) if s2.restored is not None else fused,
        "imagined": crop(s2.imagined) if s2.imagined is not None else fused,
        "fused": fused,
    }


def _to_rgb(panel: np.ndarray) -> np.ndarray:
    if panel.shape[2] == 1:
        return np.repeat(panel, 3, axis=2)
    return panel


def intermediates_grid(outputs: dict[str, np.ndarray]) -> np.ndarray:
    """2x3 grid image holding the six intermediate panels."""
    panels = [_to_rgb(outputs[name]) for name in INTERMEDIATE_PANELS]
    rows = [np.concatenate(panels[:3], axis=1), np.concatenate(panels[3:], axis=1)]
    return np.concatenate(rows, axis=0)


def remove_watermark(checkpoint: str | os.PathLike | RirciModel,
                     image_path: str | os.PathLike,
                     out_path: str | os.PathLike,
                     dump_intermediates: bool = False) -> dict[str, np.ndarray]:
    """Write the restored image (and optionally the intermediates grid)."""
    if isinstance(checkpoint, RirciModel):
        model = checkpoint
    else:
        model, _ = load_checkpoint(checkpoint)
    img, _ = imaging.load_image(image_path)
    outputs = run_model_on_image(model, img)
    imaging.save_image(outputs["fused"], out_path)
    if dump_intermediates:
        root, ext = os.path.splitext(os.fspath(out_path))
        imaging.save_image(intermediates_grid(outputs),
                           f"{root}_intermediates{ext or '.png'}")
    return outputs
