"""Procedural grid-structured glyphs for desk-scale experiments.

Every row owns a base stroke pattern, every column a modifier mark drawn in a
strip on the right edge, so glyphs sharing a column share their modifier and
glyphs sharing a row share their base.
"""

from __future__ import annotations

import logging

import numpy as np
from PIL import Image, ImageDraw

from fidel_mtl.alphabet.grid import AlphabetGrid, make_regular_grid
from fidel_mtl.augment.transforms import rotate_pixels, translate_pixels
from fidel_mtl.core.rng import STREAM_SYNTH, RngStream
from fidel_mtl.errors import ValidationError
from fidel_mtl.types import GlyphImage, Tensor


LOGGER = logging.getLogger(__name__)

MAX_CLASSES = 34 * 9
MODIFIER_BITS = 9
JITTER_DEGREES = 4.0
STROKES_PER_BASE = 3


def _blank(canvas_size: int) -> tuple[Image.Image, ImageDraw.ImageDraw]:
    image = Image.new("L", (canvas_size, canvas_size), color=255)
    return image, ImageDraw.Draw(image)


def _to_pixels(image: Image.Image) -> Tensor:
    return (np.asarray(image, dtype=np.float32) / np.float32(255.0))[:, :, np.newaxis]


def modifier_strip_start(canvas_size: int) -> int:
    return int(canvas_size * 0.75)


def modifier_slot(bit: int) -> int:
    # center-out: 4, 3, 5, 2, 6, ...
    offset = (bit + 1) // 2
    return MODIFIER_BITS // 2 + (offset if bit % 2 == 0 else -offset)


def render_base(row: int, canvas_size: int, seed: int) -> Tensor:
    """Seeded stroke pattern of ``row``, kept left of the modifier strip.

    Endpoints stay inside the canvas' inscribed circle so rotation never clips ink.
    """
    rng = RngStream(seed, STREAM_SYNTH, (0, row))
    low, high = int(canvas_size * 0.22), modifier_strip_start(canvas_size) - 3
    image, draw = _blank(canvas_size)
    for _ in range(STROKES_PER_BASE):
        x0, y0, x1, y1 = (int(value) for value in rng.integers(low, high + 1, 4))
        draw.line((x0, y0, x1, y1), fill=0, width=2)
    return _to_pixels(image)


def render_modifier(col: int, canvas_size: int) -> Tensor:
    """Column mark: the bits of ``col`` as small squares stacked in the right strip.

    Low bits take the slots nearest the vertical center, so small alphabets keep
    their marks away from the corners.
    """
    if not 1 <= col < 2**MODIFIER_BITS:
        raise ValidationError(f"column {col} cannot be encoded as a modifier mark")
    cell = max(2, (canvas_size - 4) // MODIFIER_BITS)
    left = modifier_strip_start(canvas_size) + 1
    top = max(0, (canvas_size - cell * MODIFIER_BITS) // 2)
    image, draw = _blank(canvas_size)
    for bit in range(MODIFIER_BITS):
        if col >> bit & 1:
            y = top + modifier_slot(bit) * cell
            draw.rectangle((left, y, left + cell - 2, y + cell - 2), fill=0)
    return _to_pixels(image)


def render_class(row: int, col: int, canvas_size: int, seed: int) -> Tensor:
    return np.minimum(render_base(row, canvas_size, seed), render_modifier(col, canvas_size))


def jitter(pixels: Tensor, rng: RngStream) -> Tensor:
    degrees = float(rng.uniform(-JITTER_DEGREES, JITTER_DEGREES))
    dy, dx = (int(value) for value in rng.integers(-1, 2, 2))
    return translate_pixels(rotate_pixels(pixels, degrees), dy, dx)


def synth_glyphs(
    num_rows: int,
    num_cols: int,
    samples_per_class: int,
    seed: int = 0,
    canvas_size: int = 32,
) -> tuple[list[GlyphImage], AlphabetGrid]:
    """Samples ordered by label, then sample index; sample k is attributed to writer ``synth-k``."""
    if num_rows < 1 or num_cols < 1:
        raise ValidationError(f"synthetic grid needs at least one row and column, got {num_rows}x{num_cols}")
    if num_rows * num_cols > MAX_CLASSES:
        raise ValidationError(f"synthetic grid of {num_rows}x{num_cols} exceeds {MAX_CLASSES} classes")
    if samples_per_class < 1:
        raise ValidationError(f"samples per class must be >= 1, got {samples_per_class}")

    grid = make_regular_grid(num_rows, num_cols)
    bases = [render_base(row, canvas_size, seed) for row in range(1, num_rows + 1)]
    modifiers = [render_modifier(col, canvas_size) for col in range(1, num_cols + 1)]

    samples: list[GlyphImage] = []
    for row in range(1, num_rows + 1):
        for col in range(1, num_cols + 1):
            label = (row - 1) * num_cols + col
            clean = np.minimum(bases[row - 1], modifiers[col - 1])
            for index in range(samples_per_class):
                rng = RngStream(seed, STREAM_SYNTH, (1, label, index))
                samples.append(GlyphImage(pixels=jitter(clean, rng), source_writer=f"synth-{index:03d}", label=label))

    LOGGER.info("Synthesized %d glyphs: %d classes x %d samples", len(samples), grid.num_labels, samples_per_class)
    return samples, grid
