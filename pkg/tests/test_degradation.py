import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drln.degradation import (
    DegradationSpec,
    bicubic_resize,
    blur_downsample,
    degrade,
    gaussian_blur,
    gaussian_kernel,
    gaussian_noise,
    make_pairs,
    noisy_downsample,
    read_manifest,
    resize_weights,
)
from drln.imageio import read_png, to_uint8, write_png
from drln.metrics import psnr
from drln.synthetic import texture

from oracles import resize_1d


def smooth_image(h=48, w=40, seed=0):
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    rng = np.random.default_rng(seed)
    chans = []
    for _ in range(3):
        a, b, c = rng.uniform(1, 3, 3)
        chans.append(0.5 + 0.4 * np.sin(a * yy + b * xx + c))
    return np.stack(chans, axis=-1)


# -- bicubic resize ---------------------------------------------------------------------


@pytest.mark.parametrize("factor", [2, 3, 4, 8])
@pytest.mark.parametrize("direction", ["up", "down"])
def test_constant_image_is_preserved(factor, direction):
    img = np.full((24, 16, 3), 0.37)
    out = bicubic_resize(img, factor, direction)
    np.testing.assert_allclose(out, 0.37, rtol=0, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(n_in=st.integers(1, 40), n_out=st.integers(1, 80), factor=st.sampled_from([0.125, 0.25, 1 / 3, 0.5, 2.0, 3.0]))
def test_weights_partition_unity(n_in, n_out, factor):
    idx, wts = resize_weights(n_in, n_out, factor)
    np.testing.assert_allclose(wts.sum(axis=1), 1.0, rtol=0, atol=1e-12)
    assert idx.min() >= 0 and idx.max() < n_in


def test_factor_one_is_identity():
    img = np.random.default_rng(0).uniform(size=(7, 9, 3))
    for direction in ("up", "down"):
        np.testing.assert_allclose(bicubic_resize(img, 1, direction), img, rtol=0, atol=1e-12)


@pytest.mark.parametrize("scale", [0.5, 0.25, 1 / 3, 2.0, 3.0])
def test_ramp_matches_scalar_kernel_oracle(scale):
    ramp = np.arange(24, dtype=np.float64) ** 1.5 / 24
    img = np.repeat(ramp[:, None], 3, axis=1)
    factor, direction = (1 / scale, "down") if scale < 1 else (scale, "up")
    out = bicubic_resize(img, factor, direction)
    expected = resize_1d(ramp, scale)
    assert out.shape[0] == len(expected) == math.ceil(24 * scale)
    np.testing.assert_allclose(out[:, 0], expected, rtol=0, atol=1e-12)


def test_resize_output_extents():
    img = np.zeros((10, 7))
    assert bicubic_resize(img, 4, "down").shape == (3, 2)
    assert bicubic_resize(img, 3, "up").shape == (30, 21)
    assert bicubic_resize(np.zeros((5, 4, 3)), 2, "down").shape == (3, 2, 3)


def test_resize_is_separable_and_channelwise():
    rng = np.random.default_rng(1)
    img = rng.uniform(size=(12, 10, 3))
    out = bicubic_resize(img, 2, "down")
    for c in range(3):
        np.testing.assert_array_equal(bicubic_resize(img[..., c], 2, "down"), out[..., c])


def test_resize_errors():
    with pytest.raises(ValueError):
        bicubic_resize(np.zeros((4, 4)), 0)
    with pytest.raises(ValueError):
        bicubic_resize(np.zeros((4, 4)), 2, "sideways")
    with pytest.raises(ValueError):
        bicubic_resize(np.zeros((4, 4)), 2, output_shape=(0, 2))


def test_resize_deterministic():
    img = np.random.default_rng(2).uniform(size=(20, 20, 3))
    assert bicubic_resize(img, 3).tobytes() == bicubic_resize(img.copy(), 3).tobytes()


def test_smooth_image_bicubic_beats_nearest():
    hr = smooth_image(64, 64)
    lr = bicubic_resize(hr, 4, "down")
    up = bicubic_resize(lr, 4, "up")
    nearest = np.repeat(np.repeat(lr, 4, axis=0), 4, axis=1)
    assert psnr(hr, up, shave=4) > psnr(hr, nearest, shave=4)


# -- blur -----------------------------------------------------------------------------------


def test_gaussian_kernel_normalised():
    k = gaussian_kernel(1.6)
    assert abs(k.sum() - 1.0) <= 1e-12
    assert k.shape == (2 * math.ceil(3 * math.sqrt(1.6)) + 1,) * 2 == (9, 9)
    np.testing.assert_array_equal(k, k.T)
    np.testing.assert_array_equal(k, k[::-1, ::-1])


def test_impulse_response_matches_closed_form():
    img = np.zeros((21, 21))
    img[10, 10] = 1.0
    out = gaussian_blur(img, 1.6)
    r = 4
    z = sum(math.exp(-(i * i + j * j) / 3.2) for i in range(-r, r + 1) for j in range(-r, r + 1))
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            assert out[10 + dy, 10 + dx] == pytest.approx(math.exp(-(dy * dy + dx * dx) / 3.2) / z, abs=1e-15)
    assert out[10, 10 + r + 1] == 0.0


def test_blur_constant_and_shape():
    img = np.full((30, 24, 3), 0.6)
    np.testing.assert_allclose(gaussian_blur(img), 0.6, rtol=0, atol=1e-12)
    out = blur_downsample(img, 3)
    assert out.shape == (10, 8, 3)
    np.testing.assert_allclose(out, 0.6, rtol=0, atol=1e-9)


def test_blur_downsample_is_blur_then_resize():
    img = np.random.default_rng(3).uniform(size=(18, 15, 3))
    np.testing.assert_array_equal(blur_downsample(img, 3), bicubic_resize(gaussian_blur(img, 1.6), 3, "down"))


# -- noise ----------------------------------------------------------------------------------


def test_sigma_zero_equals_bicubic():
    img = smooth_image()
    np.testing.assert_array_equal(noisy_downsample(img, 2, 0.0, seed=4), bicubic_resize(img, 2, "down"))


def test_noise_std_within_two_percent():
    n = gaussian_noise((512, 512), 25.0, seed=11)
    assert abs(n.std() / (25 / 255) - 1) < 0.02
    assert abs(n.mean()) < 1e-3


def test_noise_deterministic_given_seed():
    img = smooth_image()
    a = noisy_downsample(img, 2, 15.0, seed=5)
    b = noisy_downsample(img, 2, 15.0, seed=5)
    c = noisy_downsample(img, 2, 15.0, seed=6)
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != c.tobytes()
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_psnr_decreases_with_sigma():
    img = smooth_image(96, 96)
    clean = bicubic_resize(img, 2, "down")
    scores = [psnr(clean, noisy_downsample(img, 2, s, seed=7)) for s in (5, 10, 15, 20, 25)]
    assert all(a > b for a, b in zip(scores, scores[1:]))


def test_negative_sigma_rejected():
    with pytest.raises(ValueError):
        noisy_downsample(smooth_image(), 2, -1.0, seed=0)


# -- spec / dispatch --------------------------------------------------------------------


def test_spec_validation_and_warnings():
    assert DegradationSpec("bd", 3).kind == "BD"
    with pytest.raises(ValueError):
        DegradationSpec("XX", 2)
    with pytest.raises(ValueError):
        DegradationSpec("BI", 5)
    with pytest.raises(ValueError):
        DegradationSpec("ND", 2, sigma_noise=300)
    assert DegradationSpec("BD", 3).protocol_warnings() == []
    assert DegradationSpec("BD", 4).protocol_warnings()
    assert DegradationSpec("ND", 2, sigma_noise=30).protocol_warnings()
    assert DegradationSpec("ND", 2, sigma_noise=25).protocol_warnings() == []


def test_degrade_dispatch():
    img = smooth_image(24, 24)
    np.testing.assert_array_equal(degrade(img, DegradationSpec("BI", 2)), bicubic_resize(img, 2))
    np.testing.assert_array_equal(degrade(img, DegradationSpec("BD", 3)), blur_downsample(img, 3))
    nd = DegradationSpec("ND", 2, sigma_noise=10, rng_seed=3)
    np.testing.assert_array_equal(degrade(img, nd), noisy_downsample(img, 2, 10, 3))


# -- make_pairs -------------------------------------------------------------------------


SIZES = [(33, 41), (40, 40), (17, 22), (64, 30), (25, 63)]


def hr_dir(tmp_path):
    d = tmp_path / "hr"
    d.mkdir()
    for i, (h, w) in enumerate(SIZES):
        write_png(d / f"img{i}.png", texture((h, w), seed=i))
    return d


def test_make_pairs_shapes(tmp_path):
    src = hr_dir(tmp_path)
    manifest = make_pairs(src, DegradationSpec("BI", 4), tmp_path / "out")
    rows = read_manifest(manifest)
    assert [r.name for r in rows] == [f"img{i}.png" for i in range(5)]
    for row, (h, w) in zip(rows, SIZES):
        lr, hr = read_png(row.lr_path), read_png(row.hr_path)
        assert lr.shape == (h // 4, w // 4, 3)
        assert hr.shape == (h // 4 * 4, w // 4 * 4, 3)
        assert (row.kind, row.scale) == ("BI", 4)


def test_make_pairs_lr_is_quantized_degradation(tmp_path):
    src = hr_dir(tmp_path)
    rows = read_manifest(make_pairs(src, DegradationSpec("BI", 2), tmp_path / "out"))
    hr = read_png(rows[1].hr_path)
    np.testing.assert_array_equal(to_uint8(read_png(rows[1].lr_path)), to_uint8(bicubic_resize(hr, 2)))


def test_make_pairs_empty_directory(tmp_path):
    (tmp_path / "empty").mkdir()
    manifest = make_pairs(tmp_path / "empty", DegradationSpec("BI", 2), tmp_path / "out")
    assert manifest.read_text() == ""
    assert read_manifest(manifest) == []


def test_make_pairs_rerun_byte_identical(tmp_path):
    src = hr_dir(tmp_path)
    spec = DegradationSpec("ND", 2, sigma_noise=15, rng_seed=9)
    a = make_pairs(src, spec, tmp_path / "a")
    b = make_pairs(src, spec, tmp_path / "b", workers=3)
    assert a.read_bytes() == b.read_bytes()
    for name in (f"img{i}.png" for i in range(5)):
        assert (tmp_path / "a/lr" / name).read_bytes() == (tmp_path / "b/lr" / name).read_bytes()


def test_make_pairs_nd_seeds_differ_per_image(tmp_path):
    d = tmp_path / "same"
    d.mkdir()
    img = np.full((32, 32, 3), 0.5)
    write_png(d / "a.png", img)
    write_png(d / "b.png", img)
    rows = read_manifest(make_pairs(d, DegradationSpec("ND", 2, sigma_noise=25), tmp_path / "out"))
    assert rows[0].lr_path.read_bytes() != rows[1].lr_path.read_bytes()


def test_make_pairs_skips_unreadable(tmp_path):
    src = hr_dir(tmp_path)
    (src / "broken.png").write_bytes(b"not a png")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        manifest = make_pairs(src, DegradationSpec("BI", 2), tmp_path / "out")
    rows = read_manifest(manifest)
    assert len(rows) == 5
    assert "# skipped\tbroken.png" in manifest.read_text()


def test_make_pairs_warns_off_protocol(tmp_path):
    src = hr_dir(tmp_path)
    with pytest.warns(UserWarning, match="x3"):
        make_pairs(src, DegradationSpec("BD", 2), tmp_path / "out")


def test_manifest_paths_relative(tmp_path):
    src = hr_dir(tmp_path)
    manifest = make_pairs(src, DegradationSpec("BI", 2), tmp_path / "out")
    first = manifest.read_text().splitlines()[0].split("\t")
    assert first[:2] == ["hr/img0.png", "lr/img0.png"]
    assert first[2:] == ["BI", "2", "0", "0"]
