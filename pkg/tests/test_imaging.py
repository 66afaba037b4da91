import numpy as np
import pytest
from PIL import Image

from rirci import imaging


def test_all_black_png_loads_as_zeros(tmp_path):
    p = tmp_path / "black.png"
    Image.fromarray(np.zeros((8, 8, 3), np.uint8)).save(p)
    rgb, alpha = imaging.load_image(p)
    assert rgb.shape == (8, 8, 3)
    assert alpha is None
    assert np.all(rgb == 0.0)


def test_all_white_png_loads_as_ones(tmp_path):
    p = tmp_path / "white.png"
    Image.fromarray(np.full((8, 8, 3), 255, np.uint8)).save(p)
    rgb, _ = imaging.load_image(p)
    assert np.all(rgb == 1.0)


def test_scaling_rule_128(tmp_path):
    p = tmp_path / "mid.png"
    Image.fromarray(np.full((4, 4, 3), 128, np.uint8)).save(p)
    rgb, _ = imaging.load_image(p)
    assert rgb == pytest.approx(128 / 255)
    assert abs(rgb[0, 0, 0] - 0.50196) < 1e-5


def test_rgba_returns_alpha_separately(tmp_path):
    p = tmp_path / "rgba.png"
    data = np.zeros((6, 5, 4), np.uint8)
    data[..., 3] = 51
    Image.fromarray(data, "RGBA").save(p)
    rgb, alpha = imaging.load_image(p)
    assert rgb.shape == (6, 5, 3)
    assert alpha.shape == (6, 5, 1)
    assert alpha == pytest.approx(0.2)


def test_unreadable_file_raises(tmp_path):
    p = tmp_path / "junk.png"
    p.write_bytes(b"not a png at all")
    with pytest.raises(OSError):
        imaging.load_image(p)


def test_missing_file_raises(tmp_path):
    with pytest.raises(OSError):
        imaging.load_image(tmp_path / "nope.png")


def test_save_zeros_and_ones_round_trip(tmp_path):
    for value in (0.0, 1.0):
        p = tmp_path / f"v{value}.png"
        imaging.save_image(np.full((5, 5, 3), value, np.float32), p)
        rgb, _ = imaging.load_image(p)
        assert np.all(rgb == value)


def test_random_round_trip_within_one_quantum(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.random((16, 16, 3)).astype(np.float32)
    p = tmp_path / "r.png"
    imaging.save_image(img, p)
    back, _ = imaging.load_image(p)
    assert np.abs(back - np.clip(img, 0, 1)).max() <= 1 / 255
    # already-quantized inputs come back exactly
    q = imaging.quantize_8bit(img)
    imaging.save_image(q, p)
    back, _ = imaging.load_image(p)
    assert np.abs(back - q).max() <= 1 / (2 * 255) + 1e-9


def test_save_does_not_mutate_input(tmp_path):
    img = np.random.default_rng(1).random((8, 8, 3)).astype(np.float32)
    copy = img.copy()
    imaging.save_image(img, tmp_path / "x.png")
    assert np.array_equal(img, copy)


def test_save_out_of_range_rejected(tmp_path):
    with pytest.raises(ValueError):
        imaging.save_image(np.full((4, 4, 3), 1.5, np.float32), tmp_path / "x.png")


def test_alpha_16bit_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    alpha = rng.random((12, 9, 1)).astype(np.float32)
    p = tmp_path / "a.png"
    imaging.save_alpha(alpha, p)
    back = imaging.load_alpha(p)
    assert back.shape == alpha.shape
    assert np.abs(back - alpha).max() <= 1 / 65535 + 1e-9


def test_alpha_to_mask():
    alpha = np.array([[[0.0], [0.3]], [[1.0], [0.0]]], np.float32)
    mask = imaging.alpha_to_mask(alpha)
    assert np.array_equal(mask, np.array([[[0], [1]], [[1], [0]]], np.float32))


def test_nchw_round_trip():
    img = np.random.default_rng(3).random((7, 5, 3)).astype(np.float32)
    assert np.array_equal(imaging.from_nchw(imaging.to_nchw(img)), img)
