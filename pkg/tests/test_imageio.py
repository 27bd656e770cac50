import numpy as np
import pytest
from PIL import Image

from drln.imageio import (
    ImageFormatError,
    from_nchw,
    from_uint8,
    modcrop,
    quantize,
    read_png,
    to_nchw,
    to_uint8,
    write_png,
)


def test_uint8_roundtrip_within_half_level():
    x = np.random.default_rng(0).uniform(size=1000)
    assert np.max(np.abs(quantize(x) - x)) <= 1 / 510 + 1e-15
    levels = np.arange(256, dtype=np.uint8)
    np.testing.assert_array_equal(to_uint8(from_uint8(levels)), levels)
    np.testing.assert_array_equal(to_uint8(np.array([-0.2, 1.3])), [0, 255])


def test_png_rgb_and_gray_roundtrip(tmp_path):
    rgb = quantize(np.random.default_rng(1).uniform(size=(5, 7, 3)))
    write_png(tmp_path / "c.png", rgb)
    np.testing.assert_array_equal(read_png(tmp_path / "c.png"), rgb)
    gray = quantize(np.random.default_rng(2).uniform(size=(4, 6, 1)))
    write_png(tmp_path / "g.png", gray)
    out = read_png(tmp_path / "g.png")
    assert out.shape == (4, 6, 1)
    np.testing.assert_array_equal(out, gray)


def test_png_write_is_byte_stable(tmp_path):
    img = np.random.default_rng(3).uniform(size=(9, 9, 3))
    write_png(tmp_path / "a.png", img)
    write_png(tmp_path / "b.png", img)
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


def test_sixteen_bit_rejected(tmp_path):
    Image.fromarray(np.full((4, 4), 40000, dtype=np.uint16)).save(tmp_path / "d.png")
    with pytest.raises(ImageFormatError, match="16-bit"):
        read_png(tmp_path / "d.png")


def test_non_png_rejected(tmp_path):
    Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).save(tmp_path / "x.bmp", format="BMP")
    with pytest.raises(ImageFormatError):
        read_png(tmp_path / "x.bmp")


def test_nchw_and_modcrop():
    img = np.random.default_rng(4).uniform(size=(6, 5, 3))
    t = to_nchw(img, np.float64)
    assert t.shape == (1, 3, 6, 5)
    np.testing.assert_array_equal(from_nchw(t), img)
    assert modcrop(np.zeros((7, 10, 3)), 4).shape == (4, 8, 3)
