"""Synthetic watermarked-dataset generation.

A watermarked image is formed by alpha compositing a transformed logo over
a clean background::

    J = A * W' + (1 - A) * I

which splits J into a watermark component ``C_w = A * W'`` and an intrinsic
background component ``C_b = (1 - A) * I``. Every generated sample carries
the full supervision tuple (J, I, A, M, C_w, C_b) plus the transform spec
that produced it, so a dataset is bit-reproducible from (seed, sources).
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import imaging

__all__ = [
    "SynthesisConfigError",
    "PlacementError",
    "WatermarkAsset",
    "CompositeSpec",
    "Sample",
    "DatasetManifest",
    "SynthesisConfig",
    "sample_transform",
    "transform_watermark",
    "composite",
    "generate_dataset",
    "load_manifest",
    "load_watermark_assets",
    "load_sample",
]

MANIFEST_SCHEMA_VERSION = 1


class SynthesisConfigError(ValueError):
    """Invalid dataset-generation configuration (empty/inverted intervals etc.)."""


class PlacementError(ValueError):
    """A transform pushed the watermark fully off the canvas."""


@dataclass(frozen=True)
class WatermarkAsset:
    """A logo: colors plus its own opacity map (pre-transform)."""

    rgb: np.ndarray    # (h, w, 3) in [0, 1]
    alpha: np.ndarray  # (h, w, 1) in [0, 1]
    id: str

    def __post_init__(self):
        if self.rgb.shape[:2] != self.alpha.shape[:2]:
            raise ValueError("watermark rgb and alpha sizes differ")
        if not np.any(self.alpha > 0):
            raise ValueError(f"watermark {self.id!r} has identically zero alpha")


@dataclass(frozen=True)
class CompositeSpec:
    """Sampled geometric/opacity transform applied before compositing.

    ``rotation`` is in degrees, counterclockwise in image coordinates.
    ``scale`` is the target logo width as a fraction of the canvas width.
    ``position`` is the requested (row, col) of the footprint's top-left
    corner; it is clamped so the footprint stays on the canvas.
    """

    flip_h: bool
    scale: float
    rotation: float
    position: tuple[int, int]
    opacity: float
    seed: int

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["position"] = list(self.position)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CompositeSpec":
        return cls(flip_h=bool(d["flip_h"]), scale=float(d["scale"]),
                   rotation=float(d["rotation"]),
                   position=(int(d["position"][0]), int(d["position"][1])),
                   opacity=float(d["opacity"]), seed=int(d["seed"]))


@dataclass(frozen=True)
class Sample:
    """Supervision tuple for one watermarked image."""

    J: np.ndarray    # watermarked image (H, W, 3)
    I: np.ndarray    # clean background
    C_w: np.ndarray  # watermark component A * W'
    C_b: np.ndarray  # intrinsic background component (1 - A) * I
    A: np.ndarray    # opacity map (H, W, 1)
    M: np.ndarray    # binary watermark-region mask (H, W, 1)
    spec: CompositeSpec


@dataclass
class SynthesisConfig:
    canvas: tuple[int, int] = (256, 256)
    opacity_range: tuple[float, float] = (0.5, 1.0)
    scale_range: tuple[float, float] = (0.5, 1.0)
    rotation_range: tuple[float, float] = (-45.0, 45.0)
    flip_prob: float = 0.5
    count: int = 0
    seed: int = 0
    split: str = "train"

    def __post_init__(self):
        for name in ("opacity_range", "scale_range", "rotation_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise SynthesisConfigError(f"{name} is empty or inverted: ({lo}, {hi})")
        if self.opacity_range[0] < 0.0 or self.opacity_range[1] > 1.0:
            raise SynthesisConfigError("opacity range must lie within [0, 1]")


@dataclass
class DatasetManifest:
    schema_version: int
    rng_seed: int
    opacity_range: tuple[float, float]
    canvas: tuple[int, int]
    scale_range: tuple[float, float]
    rotation_range: tuple[float, float]
    entries: list[dict] = field(default_factory=list)

    @property
    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for e in self.entries:
            out[e["split"]] = out.get(e["split"], 0) + 1
        return out

    def to_json(self) -> str:
        payload = {
            "schema_version": self.schema_version,
            "rng_seed": self.rng_seed,
            "opacity_range": list(self.opacity_range),
            "canvas": list(self.canvas),
            "scale_range": list(self.scale_range),
            "rotation_range": list(self.rotation_range),
            "counts": self.counts,
            "entries": self.entries,
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    with open(path) as fh:
        d = json.load(fh)
    m = DatasetManifest(
        schema_version=d["schema_version"],
        rng_seed=d["rng_seed"],
        opacity_range=tuple(d["opacity_range"]),
        canvas=tuple(d["canvas"]),
        scale_range=tuple(d["scale_range"]),
        rotation_range=tuple(d["rotation_range"]),
        entries=d["entries"],
    )
    root = Path(path).parent
    for e in m.entries:
        for key in ("j_path", "i_path", "w_path", "a_path"):
            if not (root / e[key]).exists():
                raise FileNotFoundError(f"manifest references missing file {e[key]!r}")
    declared = d.get("counts", m.counts)
    if declared != m.counts:
        raise ValueError("manifest counts do not match its entries")
    return m


def sample_transform(rng: np.random.Generator, config: SynthesisConfig) -> CompositeSpec:
    """Draw one transform spec from the configured distributions.

    Deterministic given the generator state; callers derive a fresh
    generator per (seed, sample index).
    """
    h, w = config.canvas
    flip_h = bool(rng.random() < config.flip_prob)
    scale = float(rng.uniform(*config.scale_range))
    rotation = float(rng.uniform(*config.rotation_range))
    position = (int(rng.integers(0, h)), int(rng.integers(0, w)))
    opacity = float(rng.uniform(*config.opacity_range))
    return CompositeSpec(flip_h=flip_h, scale=scale, rotation=rotation,
                         position=position, opacity=opacity, seed=config.seed)


def transform_watermark(asset: WatermarkAsset, spec: CompositeSpec,
                        canvas: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Apply flip/scale/rotate/translate/opacity to a logo and paint it onto
    an empty canvas.

    Returns ``(W', A)``: the transformed logo colors and the opacity map
    (asset alpha after geometry, times ``spec.opacity``). Outside the logo
    footprint ``A`` is 0. A negative ``spec.scale`` means "keep the asset's
    native size" (used for identity transforms and tests).
    """
    h, w = canvas
    rgba = np.concatenate([asset.rgb, asset.alpha], axis=2)

    if spec.flip_h:
        rgba = rgba[:, ::-1, :]

    if spec.scale >= 0:
        target_w = max(1, int(round(spec.scale * w)))
        f = target_w / rgba.shape[1]
        if abs(f - 1.0) > 1e-9:
            rgba = ndimage.zoom(rgba, (f, f, 1.0), order=1, mode="nearest",
                                grid_mode=True)
            rgba = np.clip(rgba, 0.0, 1.0)

    if spec.rotation != 0.0:
        # positive angle = counterclockwise in (row, col) image coordinates
        rgba = ndimage.rotate(rgba, spec.rotation, axes=(1, 0), reshape=True,
                              order=1, mode="constant", cval=0.0)
        rgba = np.clip(rgba, 0.0, 1.0)

    fh, fw = rgba.shape[:2]
    if fh == 0 or fw == 0:
        raise PlacementError("watermark degenerated to empty footprint")

    r0 = min(max(spec.position[0], 0), max(h - fh, 0))
    c0 = min(max(spec.position[1], 0), max(w - fw, 0))
    if r0 >= h or c0 >= w:
        raise PlacementError("watermark placed fully off canvas")

    wp = np.zeros((h, w, 3), dtype=np.float32)
    alpha = np.zeros((h, w, 1), dtype=np.float32)
    rr, cc = min(fh, h - r0), min(fw, w - c0)
    wp[r0:r0 + rr, c0:c0 + cc] = rgba[:rr, :cc, :3]
    alpha[r0:r0 + rr, c0:c0 + cc] = rgba[:rr, :cc, 3:4] * spec.opacity

    if not np.any(alpha > 0):
        raise PlacementError("no watermark pixel landed inside the canvas")
    return wp, alpha


def composite(I: np.ndarray, Wp: np.ndarray, A: np.ndarray,
              spec: CompositeSpec | None = None) -> Sample:
    """Alpha-composite a transformed watermark over a background.

    ``J`` is computed as ``C_w + C_b`` so the decomposition identity holds
    exactly in the working precision.
    """
    if I.shape != Wp.shape or A.shape[:2] != I.shape[:2] or A.shape[2] != 1:
        raise ValueError(f"shape mismatch: I{I.shape} W'{Wp.shape} A{A.shape}")
    I = I.astype(np.float32)
    Wp = Wp.astype(np.float32)
    A = A.astype(np.float32)
    C_w = A * Wp
    C_b = (1.0 - A) * I
    J = C_w + C_b
    M = imaging.alpha_to_mask(A)
    if spec is None:
        spec = CompositeSpec(flip_h=False, scale=-1.0, rotation=0.0,
                             position=(0, 0), opacity=1.0, seed=0)
    return Sample(J=J, I=I, C_w=C_w, C_b=C_b, A=A, M=M, spec=spec)


def load_watermark_assets(watermarks_dir: str | os.PathLike) -> list[WatermarkAsset]:
    """Load every RGBA PNG in a directory as a watermark asset (sorted by name)."""
    paths = sorted(p for p in Path(watermarks_dir).iterdir()
                   if p.suffix.lower() == ".png")
    assets = []
    for p in paths:
        rgb, alpha = imaging.load_image(p)
        if alpha is None:
            raise imaging.ImageFormatError(
                f"watermark {p.name!r} has no alpha channel (RGBA PNG required)")
        assets.append(WatermarkAsset(rgb=rgb, alpha=alpha, id=p.stem))
    if not assets:
        raise FileNotFoundError(f"no RGBA PNG watermarks found in {watermarks_dir!r}")
    return assets


def _prepare_background(path: Path, canvas: tuple[int, int]) -> np.ndarray:
    rgb, _ = imaging.load_image(path)
    h, w = canvas
    if rgb.shape[:2] != (h, w):
        fy, fx = h / rgb.shape[0], w / rgb.shape[1]
        rgb = ndimage.zoom(rgb, (fy, fx, 1.0), order=1, mode="nearest",
                           grid_mode=True)
        rgb = np.clip(rgb[:h, :w], 0.0, 1.0).astype(np.float32)
    return rgb


def generate_sample(index: int, config: SynthesisConfig,
                    backgrounds: list[Path],
                    assets: list[WatermarkAsset]) -> tuple[Sample, Path, str]:
    """Generate sample ``index`` from its own RNG stream.

    The stream is derived from (config.seed, index) so parallel and serial
    generation are bit-identical.
    """
    rng = np.random.default_rng([config.seed, index])
    bg_path = backgrounds[int(rng.integers(0, len(backgrounds)))]
    asset = assets[int(rng.integers(0, len(assets)))]
    spec = sample_transform(rng, config)
    I = _prepare_background(bg_path, config.canvas)
    Wp, A = transform_watermark(asset, spec, config.canvas)
    return composite(I, Wp, A, spec), bg_path, asset.id


def generate_dataset(backgrounds_dir: str | os.PathLike,
                     watermarks_dir: str | os.PathLike,
                     config: SynthesisConfig,
                     out_dir: str | os.PathLike) -> DatasetManifest:
    """Write ``config.count`` samples plus a manifest under ``out_dir``.

    Per sample, four files are written: J and I and W' as 8-bit PNGs, and
    the opacity map A as a 16-bit PNG (C_w, C_b, M are derivable). The
    manifest records the seed and every transform spec, so the dataset is
    reproducible from (manifest.rng_seed, sources).
    """
    backgrounds = sorted(p for p in Path(backgrounds_dir).iterdir()
                         if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    if not backgrounds:
        raise FileNotFoundError(f"no background images in {backgrounds_dir!r}")
    assets = load_watermark_assets(watermarks_dir)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest(
        schema_version=MANIFEST_SCHEMA_VERSION,
        rng_seed=config.seed,
        opacity_range=config.opacity_range,
        canvas=config.canvas,
        scale_range=config.scale_range,
        rotation_range=config.rotation_range,
    )
    for index in range(config.count):
        sample, bg_path, wm_id = generate_sample(index, config, backgrounds, assets)
        sid = f"{config.split}_{index:06d}"
        files = {
            "j_path": f"{sid}_J.png", "i_path": f"{sid}_I.png",
            "w_path": f"{sid}_W.png", "a_path": f"{sid}_A.png",
        }
        imaging.save_image(sample.J, out / files["j_path"])
        imaging.save_image(sample.I, out / files["i_path"])
        imaging.save_image(_wp_of(sample), out / files["w_path"])
        imaging.save_alpha(sample.A, out / files["a_path"])
        manifest.entries.append({
            "id": sid,
            "split": config.split,
            "background_path": str(bg_path.name),
            "watermark_id": wm_id,
            "spec": sample.spec.to_dict(),
            **files,
        })
    (out / "manifest.json").write_text(manifest.to_json())
    return manifest


def _wp_of(sample: Sample) -> np.ndarray:
    """Recover the transformed watermark colors W' = C_w / A inside the footprint."""
    wp = np.zeros_like(sample.C_w)
    inside = sample.A[..., 0] > 0
    wp[inside] = sample.C_w[inside] / sample.A[inside]
    return np.clip(wp, 0.0, 1.0)


def load_sample(entry: dict, root: str | os.PathLike) -> Sample:
    """Reconstruct a supervision tuple from a manifest entry.

    J is recomputed in float from the stored I, W' and A so the identity
    ``C_w + C_b == J`` holds exactly (the stored 8-bit J is for inspection
    and metric evaluation against saved files).
    """
    root = Path(root)
    I, _ = imaging.load_image(root / entry["i_path"])
    Wp, _ = imaging.load_image(root / entry["w_path"])
    A = imaging.load_alpha(root / entry["a_path"])
    return composite(I, Wp, A, CompositeSpec.from_dict(entry["spec"]))
