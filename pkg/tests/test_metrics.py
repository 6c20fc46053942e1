import math

import numpy as np
import pytest

from errors import DimensionError
from image_io import ImageU8
from metrics import YPlane, gaussian_window, psnr, quantize, rgb_to_y, ssim, y_from_float


def solid(rgb, w=2, h=2):
    return ImageU8(w, h, bytes(rgb) * (w * h))


def direct_ssim(x, y):
    win = gaussian_window()
    k = win.shape[0]
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    h, w = x.shape
    vals = []
    for i in range(h - k + 1):
        for j in range(w - k + 1):
            px, py = x[i:i + k, j:j + k], y[i:i + k, j:j + k]
            mx, my = np.sum(win * px), np.sum(win * py)
            vx = np.sum(win * (px - mx) ** 2)
            vy = np.sum(win * (py - my) ** 2)
            cxy = np.sum(win * (px - mx) * (py - my))
            vals.append(((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def random_planes(rng, size=32):
    a = rng.uniform(16, 235, size=(size, size))
    b = np.clip(a + rng.normal(0, 10, size=a.shape), 16, 235)
    return YPlane(a), YPlane(b)


def test_rgb_to_y_reference_values():
    assert rgb_to_y(solid((0, 0, 0))).values[0, 0] == pytest.approx(16.0)
    assert rgb_to_y(solid((255, 255, 255))).values[0, 0] == pytest.approx(235.0)
    assert rgb_to_y(solid((128, 128, 128))).values[0, 0] == pytest.approx(16 + 219 * 128 / 255, abs=1e-3)


def test_y_from_float_matches_byte_path():
    img = ImageU8.from_array(np.random.default_rng(0).integers(0, 256, size=(5, 4, 3), dtype=np.uint8))
    assert np.allclose(y_from_float(img.to_float()).values, rgb_to_y(img).values)


def test_quantize_snaps_to_byte_grid():
    q = quantize(np.array([[[0.5, 1.2, -0.1]]]))
    assert np.allclose(q * 255, np.round(q * 255))
    assert q.min() == 0.0 and q.max() == 1.0


def test_psnr_identical_is_inf():
    a = YPlane(np.full((8, 8), 100.0))
    assert math.isinf(psnr(a, a))


def test_psnr_unit_difference():
    a = YPlane(np.full((8, 8), 100.0))
    b = YPlane(np.full((8, 8), 101.0))
    assert psnr(a, b) == pytest.approx(20 * math.log10(255), abs=1e-9)
    assert psnr(a, YPlane(np.full((8, 8), 102.0))) < psnr(a, b)


def test_psnr_matches_two_pass_oracle_and_crops():
    rng = np.random.default_rng(1)
    a, b = random_planes(rng)
    d = a.values[2:-2, 2:-2] - b.values[2:-2, 2:-2]
    mse = sum(float(v) ** 2 for v in d.ravel()) / d.size
    assert psnr(a, b, crop=2) == pytest.approx(10 * math.log10(255 ** 2 / mse), abs=1e-9)
    shifted = psnr(YPlane(a.values + 3), YPlane(b.values + 3), crop=2)
    assert shifted == pytest.approx(psnr(a, b, crop=2), abs=1e-9)
    with pytest.raises(DimensionError):
        psnr(a, b, crop=16)


def test_ssim_identity_and_inversion():
    rng = np.random.default_rng(2)
    x = rng.uniform(0, 255, size=(24, 24))
    assert ssim(YPlane(x), YPlane(x)) == pytest.approx(1.0, abs=1e-9)
    assert ssim(YPlane(x), YPlane(255 - x)) < 0


def test_ssim_matches_direct_windowed_oracle():
    rng = np.random.default_rng(3)
    for _ in range(50):
        a, b = random_planes(rng)
        assert ssim(a, b) == pytest.approx(direct_ssim(a.values, b.values), abs=1e-7)


def test_ssim_symmetric():
    a, b = random_planes(np.random.default_rng(4))
    assert abs(ssim(a, b) - ssim(b, a)) <= 1e-12


def test_ssim_needs_window_sized_images():
    small = YPlane(np.zeros((10, 20)))
    with pytest.raises(DimensionError):
        ssim(small, small)
    big = YPlane(np.zeros((16, 16)))
    with pytest.raises(DimensionError):
        ssim(big, big, crop=3)


def test_gaussian_window_normalized():
    win = gaussian_window()
    assert win.shape == (11, 11)
    assert win.sum() == pytest.approx(1.0)
    assert win[5, 5] == win.max()
