"""Image domain types and lossless I/O.

Conventions used throughout the package:

* images at rest are ``float32`` numpy arrays of shape ``(H, W, 3)`` with
  values in ``[0, 1]``;
* opacity maps are ``(H, W, 1)`` float32 arrays in ``[0, 1]``;
* binary masks are ``(H, W, 1)`` float32 arrays with values in ``{0, 1}``;
* network tensors are ``(N, C, H, W)``; conversion is always explicit.

8-bit (or 16-bit, for alpha) conversion happens only at the I/O boundary.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

__all__ = [
    "ImageFormatError",
    "load_image",
    "save_image",
    "load_alpha",
    "save_alpha",
    "alpha_to_mask",
    "to_nchw",
    "from_nchw",
    "quantize_8bit",
]


class ImageFormatError(ValueError):
    """Raised for unsupported or undecodable image content."""


def _validate_unit_range(arr: np.ndarray, name: str) -> None:
    if arr.min() < -1e-6 or arr.max() > 1 + 1e-6:
        raise ValueError(f"{name} values must lie in [0, 1], "
                         f"got range [{arr.min():.4f}, {arr.max():.4f}]")


def load_image(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray | None]:
    """Load an 8-bit RGB or RGBA image as a unit-range float32 array.

    Returns ``(rgb, alpha)`` where ``rgb`` has shape (H, W, 3) and
    ``alpha`` is an (H, W, 1) opacity map for RGBA inputs, else None.
    Values are scaled by 1/255.
    """
    try:
        img = Image.open(path)
        img.load()
    except (OSError, Image.DecompressionBombError) as exc:
        raise OSError(f"cannot read image {path!r}: {exc}") from exc

    if img.mode in ("I", "I;16", "F"):
        raise ImageFormatError(f"unsupported bit depth for {path!r} (mode {img.mode})")
    if img.mode not in ("RGB", "RGBA"):
        img = img.convert("RGBA" if "A" in img.getbands() else "RGB")

    arr = np.asarray(img, dtype=np.float32) / 255.0
    if img.mode == "RGBA":
        return arr[..., :3], arr[..., 3:4]
    return arr, None


def save_image(img: np.ndarray, path: str | os.PathLike) -> None:
    """Save a unit-range (H, W, 3) array as an 8-bit image.

    Round trip through :func:`load_image` differs from ``clip(img, 0, 1)``
    by at most 1/255 per channel.
    """
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {img.shape}")
    _validate_unit_range(img, "image")
    data = np.clip(np.rint(np.clip(img, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path)


def load_alpha(path: str | os.PathLike) -> np.ndarray:
    """Load a 16-bit grayscale PNG opacity map as (H, W, 1) float32 in [0, 1]."""
    try:
        img = Image.open(path)
        img.load()
    except OSError as exc:
        raise OSError(f"cannot read alpha map {path!r}: {exc}") from exc
    arr = np.asarray(img)
    if arr.dtype == np.uint16 or img.mode in ("I", "I;16"):
        scale = 65535.0
    elif arr.dtype == np.uint8:
        scale = 255.0
    else:
        raise ImageFormatError(f"unsupported alpha format for {path!r} (mode {img.mode})")
    out = (arr.astype(np.float32) / scale)
    if out.ndim == 3:
        out = out[..., 0]
    return out[..., None]


def save_alpha(alpha: np.ndarray, path: str | os.PathLike) -> None:
    """Save an (H, W, 1) opacity map as a 16-bit grayscale PNG.

    16 bits keep thin opacity gradients from collapsing under quantization.
    """
    alpha = np.asarray(alpha, dtype=np.float32)
    if alpha.ndim == 3:
        alpha = alpha[..., 0]
    _validate_unit_range(alpha, "alpha")
    data = np.clip(np.rint(np.clip(alpha, 0.0, 1.0) * 65535.0), 0, 65535).astype(np.uint16)
    Image.fromarray(data).save(path)


def alpha_to_mask(alpha: np.ndarray) -> np.ndarray:
    """Binary watermark-region mask: 1 wherever opacity is nonzero."""
    return (np.asarray(alpha) > 0).astype(np.float32)


def to_nchw(img: np.ndarray) -> np.ndarray:
    """(H, W, C) image -> (1, C, H, W) network layout."""
    return np.ascontiguousarray(np.transpose(img, (2, 0, 1)))[None]


def from_nchw(t: np.ndarray) -> np.ndarray:
    """(1, C, H, W) or (C, H, W) tensor -> (H, W, C) image layout."""
    if t.ndim == 4:
        t = t[0]
    return np.ascontiguousarray(np.transpose(t, (1, 2, 0)))


def quantize_8bit(img: np.ndarray) -> np.ndarray:
    """Round a unit-range array through 8 bits and back (save/load simulation)."""
    return np.clip(np.rint(np.clip(img, 0.0, 1.0) * 255.0), 0, 255).astype(np.float32) / 255.0
