"""Raster substrate: decoding, grayscale, Gaussian filtering, resampling, cropping.

Images are plain numpy arrays. An RGB image is an (H, W, 3) uint8 array in
row-major order; a gray image is an (H, W) float array with intensities
normalized to [0, 1]. All operations are pure: inputs are never mutated.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy.ndimage import correlate1d

from .errors import ArgumentError, DecodeError

# Rec. 601 luma weights; the source protocol never specifies color handling.
_LUMA = np.array([0.299, 0.587, 0.114])

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
_JPEG_MAGIC = b"\xff\xd8\xff"


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle: top-left corner (x, y), width w, height h in pixels."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ArgumentError(f"rect sides must be >= 1, got {self.w}x{self.h}")

    @property
    def x2(self) -> int:
        """One past the right edge."""
        return self.x + self.w

    @property
    def y2(self) -> int:
        """One past the bottom edge."""
        return self.y + self.h

    @property
    def area(self) -> int:
        return self.w * self.h

    def contains_point(self, x: float, y: float) -> bool:
        """Half-open containment test: [x, x+w) x [y, y+h)."""
        return self.x <= x < self.x2 and self.y <= y < self.y2


def decode_image(data: bytes) -> np.ndarray:
    """Decode a PNG or JPEG byte stream into an (H, W, 3) uint8 array.

    Raises DecodeError (naming the offending byte offset) on malformed or
    truncated input.
    """
    if len(data) == 0:
        raise DecodeError("cannot decode image: empty stream (byte offset 0)")
    if not (data.startswith(_PNG_MAGIC) or data.startswith(_JPEG_MAGIC)):
        raise DecodeError("cannot decode image: unknown magic at byte offset 0")
    try:
        with Image.open(io.BytesIO(data)) as im:
            im.load()
            rgb = im.convert("RGB")
            return np.asarray(rgb, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        # Pillow does not expose the parse position; the stream end is the
        # earliest offset known to be unusable.
        raise DecodeError(
            f"cannot decode image: stream invalid at or before byte offset {len(data)}: {exc}"
        ) from exc


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Convert an (H, W, 3) uint8 image to [0, 1] luma intensities.

    intensity = (0.299 R + 0.587 G + 0.114 B) / 255
    """
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ArgumentError(f"expected (H, W, 3) image, got shape {img.shape}")
    return img.astype(np.float64) @ _LUMA / 255.0


def gaussian_kernel(sigma: float, dtype=np.float64) -> np.ndarray:
    """Normalized 1-D Gaussian taps with radius ceil(4*sigma)."""
    if sigma <= 0:
        raise ArgumentError(f"sigma must be > 0, got {sigma}")
    radius = int(np.ceil(4.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    k /= k.sum()
    return k.astype(dtype)


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, border replication, dimensions unchanged."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ArgumentError(f"expected a 2-D gray image, got shape {img.shape}")
    k = gaussian_kernel(sigma, dtype=img.dtype if img.dtype.kind == "f" else np.float64)
    tmp = correlate1d(img, k, axis=0, mode="nearest")
    return correlate1d(tmp, k, axis=1, mode="nearest")


def resample(img: np.ndarray, mode: str) -> np.ndarray:
    """Resample a gray image: 'up2x-linear' or 'down2x-decimate'.

    up2x doubles both dimensions with corner-aligned bilinear interpolation
    (output pixel (r, c) samples input at (r/2, c/2), clamped at edges).
    down2x keeps every second row and column.
    """
    img = np.asarray(img)
    if img.ndim != 2:
        raise ArgumentError(f"expected a 2-D gray image, got shape {img.shape}")
    h, w = img.shape
    if mode == "down2x-decimate":
        if h < 2 or w < 2:
            raise ArgumentError(f"down2x needs both dimensions >= 2, got {w}x{h}")
        return img[::2, ::2].copy()
    if mode == "up2x-linear":
        return _bilinear_axis(_bilinear_axis(img, axis=0), axis=1)
    raise ArgumentError(f"unknown resample mode {mode!r}")


def _bilinear_axis(img: np.ndarray, axis: int) -> np.ndarray:
    """Double one axis: even samples copy, odd samples average neighbors."""
    a = np.moveaxis(img, axis, 0)
    n = a.shape[0]
    out = np.empty((2 * n,) + a.shape[1:], dtype=img.dtype)
    out[0::2] = a
    out[1:-1:2] = (a[:-1] + a[1:]) / 2
    out[-1] = a[-1]
    return np.moveaxis(out, 0, axis)


def crop(img: np.ndarray, rect: Rect) -> np.ndarray:
    """Exact sub-raster copy; rect must be fully contained in the image."""
    img = np.asarray(img)
    h, w = img.shape[:2]
    if rect.x < 0 or rect.y < 0 or rect.x2 > w or rect.y2 > h:
        raise ArgumentError(f"rect {rect} not contained in {w}x{h} image")
    return img[rect.y : rect.y2, rect.x : rect.x2].copy()


def rotate90(img: np.ndarray, quarter_turns: int) -> np.ndarray:
    """Lossless counter-clockwise rotation by quarter_turns * 90 degrees.

    For a W x H image, pixel (x, y) maps to (y, W - 1 - x) after one turn.
    """
    return np.rot90(np.asarray(img), k=quarter_turns % 4).copy()


def load_gray(path) -> np.ndarray:
    """Convenience: read a PNG/JPEG file and return its [0, 1] gray raster."""
    with open(path, "rb") as fh:
        return to_grayscale(decode_image(fh.read()))
