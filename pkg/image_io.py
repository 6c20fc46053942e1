"""8-bit RGB images: binary PPM codec, optional Pillow adapter, float conversions."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from errors import DimensionError, FormatError

try:
    from PIL import Image
except ImportError:
    Image = None

log = logging.getLogger(__name__)

_WHITESPACE = b" \t\r\n\x0b\x0c"
PPM_SUFFIXES = (".ppm", ".pnm")
PILLOW_SUFFIXES = (".png", ".bmp", ".jpg", ".jpeg", ".tif", ".tiff")


@dataclass(frozen=True)
class ImageU8:
    width: int
    height: int
    pixels: bytes  # interleaved RGB, row-major

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise DimensionError(f"image dims must be positive, got {self.width}x{self.height}")
        if len(self.pixels) != 3 * self.width * self.height:
            raise DimensionError(
                f"pixel buffer has {len(self.pixels)} bytes, expected {3 * self.width * self.height}"
            )

    def to_array(self) -> np.ndarray:
        """(H, W, 3) uint8 view."""
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(self.height, self.width, 3)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ImageU8":
        arr = np.asarray(arr)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise DimensionError(f"expected (H, W, 3) array, got {arr.shape}")
        return cls(int(arr.shape[1]), int(arr.shape[0]), np.ascontiguousarray(arr, dtype=np.uint8).tobytes())

    def to_float(self) -> np.ndarray:
        """(3, H, W) float64 in [0, 1]."""
        return self.to_array().transpose(2, 0, 1).astype(np.float64) / 255.0

    @classmethod
    def from_float(cls, chw: np.ndarray) -> "ImageU8":
        """Clamp to [0, 1] and round half to even onto the 8-bit grid."""
        chw = np.asarray(chw, dtype=np.float64)
        if chw.ndim != 3 or chw.shape[0] != 3:
            raise DimensionError(f"expected (3, H, W) array, got {chw.shape}")
        u8 = np.rint(np.clip(chw, 0.0, 1.0) * 255.0).astype(np.uint8)
        return cls.from_array(u8.transpose(1, 2, 0))

    def crop(self, height: int, width: int) -> "ImageU8":
        return ImageU8.from_array(self.to_array()[:height, :width])


def _next_token(data: bytes, pos: int) -> tuple[bytes, int, int]:
    n = len(data)
    while pos < n:
        if data[pos] in _WHITESPACE:
            pos += 1
        elif data[pos] == ord("#"):
            while pos < n and data[pos] not in (10, 13):
                pos += 1
        else:
            break
    start = pos
    while pos < n and data[pos] not in _WHITESPACE and data[pos] != ord("#"):
        pos += 1
    if start == pos:
        raise FormatError("unexpected end of PPM header", start)
    return data[start:pos], start, pos


def _header_int(data: bytes, pos: int, what: str) -> tuple[int, int, int]:
    token, start, pos = _next_token(data, pos)
    if not token.isdigit():
        raise FormatError(f"PPM {what} is not a decimal integer: {token!r}", start)
    return int(token), start, pos


def read_ppm(data: bytes) -> ImageU8:
    """Parse binary P6 with maxval 255; header comments are allowed."""
    if data[:2] != b"P6":
        raise FormatError("not a binary PPM (missing P6 magic)", 0)
    if len(data) < 3 or data[2] not in _WHITESPACE:
        raise FormatError("missing whitespace after P6 magic", 2)
    pos = 2
    width, _, pos = _header_int(data, pos, "width")
    height, _, pos = _header_int(data, pos, "height")
    maxval, maxval_start, pos = _header_int(data, pos, "maxval")
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}, only 255 is accepted", maxval_start)
    if width <= 0 or height <= 0:
        raise FormatError(f"invalid PPM dimensions {width}x{height}", 2)
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise FormatError("missing whitespace after maxval", pos)
    start = pos + 1
    need = 3 * width * height
    payload = data[start:start + need]
    if len(payload) < need:
        raise FormatError(f"truncated payload: {len(payload)} of {need} bytes", start + len(payload))
    return ImageU8(width, height, bytes(payload))


def write_ppm(img: ImageU8) -> bytes:
    return f"P6\n{img.width} {img.height}\n255\n".encode("ascii") + img.pixels


def read_image(path: str | Path) -> ImageU8:
    path = Path(path)
    if path.suffix.lower() in PPM_SUFFIXES:
        return read_ppm(path.read_bytes())
    if Image is None:
        raise FormatError(f"{path.name}: only PPM is supported without Pillow installed")
    with Image.open(path) as im:
        return ImageU8.from_array(np.asarray(im.convert("RGB")))


def write_image(path: str | Path, img: ImageU8) -> None:
    path = Path(path)
    if path.suffix.lower() in PPM_SUFFIXES:
        path.write_bytes(write_ppm(img))
        return
    if Image is None:
        raise FormatError(f"{path.name}: only PPM is supported without Pillow installed")
    Image.fromarray(img.to_array(), mode="RGB").save(path)


def list_images(folder: str | Path) -> list[Path]:
    """Readable image files in `folder`, sorted by filename."""
    suffixes = PPM_SUFFIXES + (PILLOW_SUFFIXES if Image is not None else ())
    files = sorted(p for p in Path(folder).iterdir() if p.is_file() and p.suffix.lower() in suffixes)
    if not files:
        log.warning("no images found in %s", folder)
    return files
