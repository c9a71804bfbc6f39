"""Rotation, salt-and-pepper noise and shrink for glyph images.

Images are float canvases in [0, 1] with 0 = ink and 1 = background.
Resampling is bilinear on Pillow ``"F"`` images; uncovered area is background.
"""

from __future__ import annotations

import math

import numpy as np
from PIL import Image

from fidel_mtl.core.rng import RngStream
from fidel_mtl.errors import ValidationError
from fidel_mtl.types import GlyphImage, Tensor


BACKGROUND = 1.0
ROTATION_LIMITS = (-15.0, 15.0)
SHRINK_LIMITS = (0.70, 0.87)


def _to_float_image(pixels: Tensor) -> Image.Image:
    return Image.fromarray(np.ascontiguousarray(pixels.reshape(pixels.shape[0], pixels.shape[1]), dtype=np.float32))


def _from_float_image(image: Image.Image) -> Tensor:
    return np.clip(np.asarray(image, dtype=np.float32), 0.0, 1.0)[:, :, np.newaxis]


def _with_pixels(image: GlyphImage, pixels: Tensor) -> GlyphImage:
    return GlyphImage(pixels=pixels, source_writer=image.source_writer, label=image.label)


def rotate_pixels(pixels: Tensor, degrees: float) -> Tensor:
    if degrees == 0:
        return pixels.astype(np.float32, copy=True)
    rotated = _to_float_image(pixels).rotate(
        degrees,
        resample=Image.Resampling.BILINEAR,
        expand=False,
        fillcolor=BACKGROUND,
    )
    return _from_float_image(rotated)


def rotate(image: GlyphImage, degrees: float, limits: tuple[float, float] = ROTATION_LIMITS) -> GlyphImage:
    """Rotate about the canvas center, counter-clockwise for positive degrees."""
    if not limits[0] <= degrees <= limits[1]:
        raise ValidationError(f"rotation {degrees} degrees outside [{limits[0]}, {limits[1]}]")
    return _with_pixels(image, rotate_pixels(image.pixels, degrees))


def add_noise(image: GlyphImage, density: float, rng: RngStream) -> GlyphImage:
    """Salt-and-pepper: each pixel is hit with probability ``density`` and set to 0 or 1."""
    if not 0.0 <= density <= 1.0:
        raise ValidationError(f"noise density {density} outside [0, 1]")
    pixels = image.pixels.astype(np.float32, copy=True)
    hit = rng.random(pixels.shape) < density
    salt = rng.random(pixels.shape) < 0.5
    pixels[hit] = np.where(salt[hit], np.float32(1.0), np.float32(0.0))
    return _with_pixels(image, pixels)


def shrunk_size(canvas_size: int, factor: float) -> int:
    return max(1, int(math.floor(canvas_size * factor + 0.5)))


def shrink(image: GlyphImage, factor: float, limits: tuple[float, float] = SHRINK_LIMITS) -> GlyphImage:
    """Bilinear downscale to round(canvas * factor), centered on a fresh background canvas.

    Point-sampled through an affine map; no smoothing filter is applied.
    """
    if not limits[0] <= factor <= limits[1]:
        raise ValidationError(f"shrink factor {factor} outside [{limits[0]}, {limits[1]}]")
    height, width = image.pixels.shape[:2]
    inner_h, inner_w = shrunk_size(height, factor), shrunk_size(width, factor)
    small = _to_float_image(image.pixels).transform(
        (inner_w, inner_h),
        Image.Transform.AFFINE,
        (width / inner_w, 0.0, 0.0, 0.0, height / inner_h, 0.0),
        resample=Image.Resampling.BILINEAR,
        fillcolor=BACKGROUND,
    )

    canvas = np.full((height, width), BACKGROUND, dtype=np.float32)
    top, left = (height - inner_h) // 2, (width - inner_w) // 2
    canvas[top : top + inner_h, left : left + inner_w] = np.asarray(small, dtype=np.float32)
    return _with_pixels(image, np.clip(canvas, 0.0, 1.0)[:, :, np.newaxis])


def translate_pixels(pixels: Tensor, dy: int, dx: int) -> Tensor:
    """Integer shift with background fill."""
    height, width = pixels.shape[:2]
    shifted = np.full_like(pixels, BACKGROUND)
    src_y = slice(max(0, -dy), min(height, height - dy))
    dst_y = slice(max(0, dy), min(height, height + dy))
    src_x = slice(max(0, -dx), min(width, width - dx))
    dst_x = slice(max(0, dx), min(width, width + dx))
    shifted[dst_y, dst_x] = pixels[src_y, src_x]
    return shifted


def ink_mass(pixels: Tensor) -> float:
    return float(np.sum(1.0 - pixels))


def ink_bbox(pixels: Tensor, threshold: float = 0.5) -> tuple[int, int, int, int] | None:
    """(top, left, bottom, right) inclusive bounds of pixels darker than ``threshold``."""
    ink = pixels.reshape(pixels.shape[0], pixels.shape[1]) < threshold
    if not ink.any():
        return None
    rows = np.flatnonzero(ink.any(axis=1))
    cols = np.flatnonzero(ink.any(axis=0))
    return int(rows[0]), int(cols[0]), int(rows[-1]), int(cols[-1])
