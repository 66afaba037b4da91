import numpy as np
import pytest
import torch
from scipy import ndimage

from rirci import imaging, synthesis
from rirci.losses import PerceptualExtractor
from rirci.model import ModelConfig
from rirci.stage1 import Stage1Config
from rirci.stage2 import Stage2Config


def make_background(rng, h=72, w=96):
    """Smooth random image so compositing tests see non-trivial content."""
    img = ndimage.gaussian_filter(rng.random((h, w, 3)), sigma=(6, 6, 0))
    lo, hi = img.min(), img.max()
    return ((img - lo) / (hi - lo + 1e-9)).astype(np.float32)


def make_logo(rng, h=24, w=36, soft=False):
    """RGBA logo asset: colored rectangle-ish shape with optional soft alpha."""
    rgb = np.clip(ndimage.gaussian_filter(rng.random((h, w, 3)), (3, 3, 0)) * 1.6,
                  0, 1).astype(np.float32)
    alpha = np.zeros((h, w, 1), dtype=np.float32)
    alpha[2:-2, 3:-3] = 1.0
    if soft:
        alpha = ndimage.gaussian_filter(alpha, (2.5, 2.5, 0)).astype(np.float32)
        alpha /= alpha.max()
    return rgb, alpha


@pytest.fixture(scope="session")
def asset_dirs(tmp_path_factory):
    """Background and watermark source directories shared across tests."""
    rng = np.random.default_rng(1234)
    root = tmp_path_factory.mktemp("assets")
    bg_dir = root / "backgrounds"
    wm_dir = root / "watermarks"
    bg_dir.mkdir()
    wm_dir.mkdir()
    for i in range(6):
        imaging.save_image(make_background(rng), bg_dir / f"bg_{i}.png")
    # one JPEG background: accepted read-only
    from PIL import Image
    jpg = (make_background(rng) * 255).astype(np.uint8)
    Image.fromarray(jpg).save(bg_dir / "bg_jpeg.jpg", quality=92)
    for i, soft in enumerate([False, True, False]):
        rgb, alpha = make_logo(rng, soft=soft)
        rgba = np.concatenate([rgb, alpha], axis=2)
        data = np.clip(np.rint(rgba * 255), 0, 255).astype(np.uint8)
        Image.fromarray(data, mode="RGBA").save(wm_dir / f"logo_{i}.png")
    return bg_dir, wm_dir


@pytest.fixture(scope="session")
def tiny_dataset(asset_dirs, tmp_path_factory):
    """12-sample 32x32 dataset with wide opacity range."""
    bg_dir, wm_dir = asset_dirs
    out = tmp_path_factory.mktemp("dataset")
    cfg = synthesis.SynthesisConfig(canvas=(32, 32), opacity_range=(0.1, 1.0),
                                    scale_range=(0.4, 0.8), count=12, seed=7)
    synthesis.generate_dataset(bg_dir, wm_dir, cfg, out)
    return out / "manifest.json"


def tiny_model_config(**stage2_kwargs) -> ModelConfig:
    return ModelConfig(
        stage1=Stage1Config(widths=(8, 12, 16, 24, 32), refinement_steps=2),
        stage2=Stage2Config(base_width=8, glci_blocks=2, local_block=(2, 2),
                            global_grid=(2, 2), **stage2_kwargs))


@pytest.fixture(scope="session")
def small_extractor():
    return PerceptualExtractor(provenance="fixed-seed-random", seed=0,
                               width_scale=0.125)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)
