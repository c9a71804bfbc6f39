"""Image ingestion and the writer-disjoint split."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
import logging
from pathlib import Path

import numpy as np
from PIL import Image

from fidel_mtl.alphabet.grid import AlphabetGrid
from fidel_mtl.core.rng import STREAM_SPLIT, RngStream
from fidel_mtl.errors import ConfigurationError, ValidationError
from fidel_mtl.types import GlyphImage, IngestReport


LOGGER = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".pgm", ".pbm"}
SPLIT_NAMES = ("train", "val", "test")


def normalize_image(image: Image.Image, canvas_size: int) -> np.ndarray:
    """Grayscale, bilinear resample to the canvas, stretch to [0, 1] (0 = ink)."""
    gray = image.convert("L")
    if gray.size != (canvas_size, canvas_size):
        gray = gray.resize((canvas_size, canvas_size), Image.Resampling.BILINEAR)
    pixels = np.asarray(gray, dtype=np.float32) / np.float32(255.0)
    low, high = float(pixels.min()), float(pixels.max())
    if high > low:
        pixels = (pixels - low) / np.float32(high - low)
    else:
        pixels = np.ones_like(pixels)
    return np.clip(pixels, 0.0, 1.0)[:, :, np.newaxis].astype(np.float32)


def is_blank(pixels: np.ndarray) -> bool:
    return not bool(np.any(pixels < 1.0))


def load_glyph_pixels(path: Path, canvas_size: int) -> np.ndarray:
    with Image.open(path) as image:
        return normalize_image(image, canvas_size)


def _label_from_path(path: Path) -> int | None:
    try:
        return int(path.stem)
    except ValueError:
        return None


def ingest_directory(
    path: Path,
    grid: AlphabetGrid,
    canvas_size: int = 32,
    workers: int = 1,
) -> tuple[list[GlyphImage], IngestReport]:
    """Read ``<writerId>/<label>.<ext>`` images; unreadable files are reported, not fatal."""
    report = IngestReport()
    if not path.is_dir():
        raise FileNotFoundError(f"source directory not found: {path}")

    jobs: list[tuple[str, int, Path]] = []
    for writer_dir in sorted(item for item in path.iterdir()):
        if not writer_dir.is_dir():
            report.warnings.append(f"ignoring non-directory entry {writer_dir.name}")
            continue
        for file_path in sorted(writer_dir.iterdir()):
            if file_path.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            report.files_seen += 1
            label = _label_from_path(file_path)
            if label is None:
                report.warnings.append(f"{file_path}: file name is not a label number, skipped")
                continue
            if not 1 <= label <= grid.num_labels:
                raise ValidationError(f"{file_path}: label out of range ({label} not in 1..{grid.num_labels})")
            jobs.append((writer_dir.name, label, file_path))

    if not jobs:
        report.warnings.append(f"no images found under {path}")
        LOGGER.warning("No images found under %s", path)
        return [], report

    def _decode(job: tuple[str, int, Path]) -> GlyphImage | str:
        writer, label, file_path = job
        try:
            return GlyphImage(pixels=load_glyph_pixels(file_path, canvas_size), source_writer=writer, label=label)
        except (OSError, ValueError) as exc:
            return f"{file_path}: {exc}"

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            decoded = list(pool.map(_decode, jobs))
    else:
        decoded = [_decode(job) for job in jobs]

    samples: list[GlyphImage] = []
    for (_, _, file_path), item in zip(jobs, decoded):
        if isinstance(item, str):
            report.errors.append(item)
            LOGGER.warning("Unreadable image skipped: %s", item)
            continue
        if is_blank(item.pixels):
            report.warnings.append(f"{file_path}: uniform intensity, stored as an empty canvas")
            LOGGER.warning("Uniform image has no ink: %s", file_path)
        samples.append(item)

    LOGGER.info(
        "Ingested %d images from %d writers (%d unreadable)",
        len(samples),
        len({sample.source_writer for sample in samples}),
        len(report.errors),
    )
    return samples, report


def _allocate(total: int, ratio: tuple[int, ...]) -> list[int]:
    # largest remainder; ties go to the earlier split
    weight = sum(ratio)
    quotas = [total * part / weight for part in ratio]
    counts = [int(quota) for quota in quotas]
    order = sorted(range(len(ratio)), key=lambda index: (-(quotas[index] - counts[index]), index))
    for index in order[: total - sum(counts)]:
        counts[index] += 1
    return counts


def partition_writers(writers: list[str], ratio: tuple[int, int, int], seed: int) -> dict[str, str]:
    """Map each writer to a split name by seeded shuffle."""
    if len(ratio) != 3 or any(part < 0 for part in ratio) or sum(ratio) == 0:
        raise ValidationError(f"split ratio must be three non-negative integers, got {ratio}")
    unique = sorted(set(writers))
    if len(unique) < sum(ratio):
        raise ConfigurationError(
            f"need at least {sum(ratio)} distinct writers for ratio {':'.join(map(str, ratio))}, found {len(unique)}"
        )
    order = RngStream(seed, STREAM_SPLIT).permutation(len(unique))
    shuffled = [unique[index] for index in order]
    assignment: dict[str, str] = {}
    start = 0
    for name, count in zip(SPLIT_NAMES, _allocate(len(unique), ratio)):
        for writer in shuffled[start : start + count]:
            assignment[writer] = name
        start += count
    return assignment


def split_by_writer(
    samples: list[GlyphImage],
    ratio: tuple[int, int, int] = (9, 2, 1),
    seed: int = 0,
) -> tuple[list[GlyphImage], list[GlyphImage], list[GlyphImage]]:
    """One global writer partition, applied to every label."""
    assignment = partition_writers([sample.source_writer for sample in samples], ratio, seed)
    buckets: dict[str, list[GlyphImage]] = {name: [] for name in SPLIT_NAMES}
    for sample in samples:
        buckets[assignment[sample.source_writer]].append(sample)
    LOGGER.info(
        "Writer split %s: train=%d val=%d test=%d images",
        ":".join(map(str, ratio)),
        len(buckets["train"]),
        len(buckets["val"]),
        len(buckets["test"]),
    )
    return buckets["train"], buckets["val"], buckets["test"]
