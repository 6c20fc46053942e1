"""2-D DFT and the spatial + frequency training loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from errors import ConfigError, DimensionError, NumericError
from tensor import Tensor, record

# Smoothing inside the spectral modulus keeps the gradient finite at D = 0.
MODULUS_EPS = 1e-12
_MODULUS_FLOOR = float(np.sqrt(MODULUS_EPS))


@dataclass(frozen=True)
class ComplexPlane:
    shape: tuple[int, int]
    re: np.ndarray
    im: np.ndarray

    def __post_init__(self) -> None:
        h, w = self.shape
        if self.re.size != h * w or self.im.size != h * w:
            raise DimensionError(f"re/im lengths {self.re.size}/{self.im.size} do not match {h}x{w}")

    @classmethod
    def from_complex(cls, z: np.ndarray) -> "ComplexPlane":
        return cls((z.shape[0], z.shape[1]), np.ascontiguousarray(z.real).reshape(-1), np.ascontiguousarray(z.imag).reshape(-1))

    def as_complex(self) -> np.ndarray:
        return (self.re + 1j * self.im).reshape(self.shape)


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 0.05
    reduction: str = "mean"

    def __post_init__(self) -> None:
        if not self.gamma >= 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if self.reduction != "mean":
            raise ConfigError(f"only mean reduction is supported, got {self.reduction!r}")


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def _radix2(a: np.ndarray, sign: int) -> np.ndarray:
    n = a.shape[-1]
    if n == 1:
        return a.copy()
    even = _radix2(a[..., ::2], sign)
    odd = _radix2(a[..., 1::2], sign)
    twiddled = np.exp(sign * 2j * np.pi * np.arange(n // 2) / n) * odd
    return np.concatenate([even + twiddled, even - twiddled], axis=-1)


def _direct(a: np.ndarray, sign: int) -> np.ndarray:
    n = a.shape[-1]
    k = np.arange(n)
    kernel = np.exp(sign * 2j * np.pi * (np.outer(k, k) % n) / n)
    return a @ kernel


def _transform_last(a: np.ndarray, sign: int, method: str) -> np.ndarray:
    n = a.shape[-1]
    if method == "radix2" or (method == "auto" and _is_pow2(n)):
        if not _is_pow2(n):
            raise DimensionError(f"radix-2 path needs a power-of-two length, got {n}")
        return _radix2(a, sign)
    if method not in ("auto", "direct"):
        raise ConfigError(f"unknown transform method {method!r}")
    return _direct(a, sign)


def transform2(a: np.ndarray, sign: int = -1, method: str = "auto") -> np.ndarray:
    """Unnormalized 2-D DFT over the last two axes; leading axes are batched."""
    z = np.asarray(a, dtype=np.complex128)
    z = _transform_last(z, sign, method)
    z = _transform_last(np.swapaxes(z, -1, -2), sign, method)
    return np.swapaxes(z, -1, -2)


def fft2d(plane: np.ndarray, method: str = "auto") -> ComplexPlane:
    """X[u, v] = sum x[h, w] exp(-2 pi i (u h / H + v w / W)), no normalization."""
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise DimensionError(f"fft2d expects a 2-D plane, got shape {plane.shape}")
    return ComplexPlane.from_complex(transform2(plane, -1, method))


def ifft2d(spectrum: ComplexPlane, method: str = "auto") -> np.ndarray:
    """Inverse of fft2d, including the 1/(H*W) factor; returns the real part."""
    h, w = spectrum.shape
    return transform2(spectrum.as_complex(), +1, method).real / (h * w)


def sr_loss(sr: Tensor, hr: Tensor, cfg: LossConfig = LossConfig()) -> Tensor:
    """mean |sr - hr| + gamma * mean over (n, c, u, v) of |FFT(sr) - FFT(hr)|.

    The spectral modulus is sqrt(re^2 + im^2 + 1e-12) - 1e-6, which is zero
    for identical inputs and differentiable everywhere.
    """
    if sr.shape != hr.shape:
        raise DimensionError(f"sr_loss shape mismatch: {sr.shape} vs {hr.shape}")
    if not (np.isfinite(sr.data).all() and np.isfinite(hr.data).all()):
        raise NumericError("sr_loss received non-finite input")

    diff = sr.data.astype(np.float64) - hr.data.astype(np.float64)
    count = diff.size
    mae = np.abs(diff).sum() / count
    value = mae
    if cfg.gamma:
        spec = transform2(diff, -1)
        smooth = np.sqrt(spec.real ** 2 + spec.imag ** 2 + MODULUS_EPS)
        value = mae + cfg.gamma * (smooth - _MODULUS_FLOOR).sum() / count

    def _backward(g: np.ndarray):
        grad = np.sign(diff) / count
        if cfg.gamma:
            grad = grad + cfg.gamma / count * transform2(spec / smooth, +1).real
        grad = grad * float(g.reshape(-1)[0])
        return grad.astype(sr.dtype), (-grad).astype(hr.dtype)

    out = np.asarray(value, dtype=sr.dtype).reshape(1, 1, 1, 1)
    return record("sr_loss", out, [sr, hr], _backward)
