"""PSNR / SSIM on the luma plane (BT.601 studio swing), the usual SR protocol."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import convolve2d

from errors import DimensionError, NumericError
from image_io import ImageU8

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * 255) ** 2
SSIM_C2 = (0.03 * 255) ** 2
_Y_WEIGHTS = (65.481, 128.553, 24.966)


@dataclass(frozen=True)
class YPlane:
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.values.ndim != 2 or min(self.values.shape) < 1:
            raise DimensionError(f"Y plane must be 2-D and non-empty, got shape {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise NumericError("Y plane contains non-finite values")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def rgb_to_y(img: ImageU8) -> YPlane:
    """Y = 16 + (65.481 R + 128.553 G + 24.966 B) / 255 for 8-bit R, G, B. No rounding."""
    rgb = img.to_array().astype(np.float64)
    wr, wg, wb = _Y_WEIGHTS
    return YPlane(16.0 + (wr * rgb[..., 0] + wg * rgb[..., 1] + wb * rgb[..., 2]) / 255.0)


def y_from_float(chw: np.ndarray) -> YPlane:
    """Same transform for a (3, H, W) float image in [0, 1]."""
    wr, wg, wb = _Y_WEIGHTS
    chw = np.asarray(chw, dtype=np.float64)
    return YPlane(16.0 + wr * chw[0] + wg * chw[1] + wb * chw[2])


def quantize(chw: np.ndarray) -> np.ndarray:
    """Round a [0, 1] float image to the 8-bit grid."""
    return np.round(np.clip(chw, 0.0, 1.0) * 255.0) / 255.0


def _cropped(a: YPlane, b: YPlane, crop: int) -> tuple[np.ndarray, np.ndarray]:
    if a.shape != b.shape:
        raise DimensionError(f"metric inputs differ in shape: {a.shape} vs {b.shape}")
    h, w = a.shape
    if crop < 0 or 2 * crop >= h or 2 * crop >= w:
        raise DimensionError(f"border crop {crop} too large for {h}x{w}")
    if crop == 0:
        return a.values, b.values
    return a.values[crop:h - crop, crop:w - crop], b.values[crop:h - crop, crop:w - crop]


def psnr(a: YPlane, b: YPlane, crop: int = 0) -> float:
    """10 log10(255^2 / MSE) after removing `crop` pixels per border; inf when identical."""
    x, y = _cropped(a, b, crop)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)


@lru_cache(maxsize=4)
def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    win = np.outer(g, g)
    win = win / win.sum()
    win.setflags(write=False)
    return win


def ssim(a: YPlane, b: YPlane, crop: int = 0) -> float:
    """Mean SSIM over all 11x11 Gaussian windows lying fully inside the image."""
    x, y = _cropped(a, b, crop) if crop else (a.values, b.values)
    if a.shape != b.shape:
        raise DimensionError(f"metric inputs differ in shape: {a.shape} vs {b.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise DimensionError(f"image {x.shape[0]}x{x.shape[1]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    win = gaussian_window()

    def filt(img: np.ndarray) -> np.ndarray:
        return convolve2d(img, win, mode="valid")

    mu_x, mu_y = filt(x), filt(y)
    sxx = filt(x * x) - mu_x * mu_x
    syy = filt(y * y) - mu_y * mu_y
    sxy = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (sxx + syy + SSIM_C2)
    return float(np.mean(num / den))
