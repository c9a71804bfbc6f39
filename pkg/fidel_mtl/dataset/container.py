"""Binary dataset containers, one file per split.

Layout: ``b"AMCR"``, u16 version, u32 JSON-header length, UTF-8 JSON header,
then little-endian payloads: pixels as u8 (value / 255 on load), labels, rows,
cols and writer indices as u16. Array offsets are relative to the payload start.
"""

from __future__ import annotations

from dataclasses import dataclass
import json
import logging
import os
from pathlib import Path
import struct
from typing import Any

import numpy as np

from fidel_mtl.alphabet.grid import AlphabetGrid
from fidel_mtl.dataset.targets import derive_targets
from fidel_mtl.errors import FormatError, ValidationError
from fidel_mtl.types import DatasetManifest, GlyphImage, TargetBatch, Tensor


LOGGER = logging.getLogger(__name__)

MAGIC = b"AMCR"
VERSION = 1
_PREFIX = struct.Struct("<4sHI")
_DTYPES = {"u1": np.dtype("u1"), "u2": np.dtype("<u2")}
_ARRAYS = (("pixels", "u1"), ("labels", "u2"), ("rows", "u2"), ("cols", "u2"), ("writers", "u2"))


def quantize_pixels(pixels: Tensor) -> np.ndarray:
    """Float [0, 1] to u8 levels; u8 input is already quantized and passes through."""
    if pixels.dtype == np.uint8:
        return pixels
    return np.rint(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


@dataclass
class DatasetSplit:
    name: str
    canvas_size: int
    pixels: np.ndarray
    labels: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    writers: np.ndarray
    writer_names: list[str]
    manifest: DatasetManifest | None = None

    def __post_init__(self) -> None:
        count = self.pixels.shape[0]
        for name in ("labels", "rows", "cols", "writers"):
            if getattr(self, name).shape != (count,):
                raise ValidationError(f"{name} length {getattr(self, name).shape} does not match image count {count}")

    def __len__(self) -> int:
        return int(self.pixels.shape[0])

    @classmethod
    def from_samples(
        cls,
        name: str,
        samples: list[GlyphImage],
        grid: AlphabetGrid,
        canvas_size: int,
        manifest: DatasetManifest | None = None,
    ) -> "DatasetSplit":
        writer_names = sorted({sample.source_writer for sample in samples})
        if len(writer_names) > 65535:
            raise ValidationError("a container holds at most 65535 distinct writers")
        writer_index = {writer: index for index, writer in enumerate(writer_names)}

        pixels = np.empty((len(samples), canvas_size, canvas_size), dtype=np.uint8)
        targets = np.empty((len(samples), 3), dtype=np.uint16)
        writers = np.empty(len(samples), dtype=np.uint16)
        for index, sample in enumerate(samples):
            if sample.pixels.shape[:2] != (canvas_size, canvas_size):
                raise ValidationError(
                    f"sample {index} has canvas {sample.pixels.shape[:2]}, expected {(canvas_size, canvas_size)}"
                )
            triple = derive_targets(sample.label, grid)
            pixels[index] = quantize_pixels(sample.pixels.reshape(canvas_size, canvas_size))
            targets[index] = (triple.label, triple.row, triple.col)
            writers[index] = writer_index[sample.source_writer]

        return cls(
            name=name,
            canvas_size=canvas_size,
            pixels=pixels,
            labels=targets[:, 0].copy(),
            rows=targets[:, 1].copy(),
            cols=targets[:, 2].copy(),
            writers=writers,
            writer_names=writer_names,
            manifest=manifest,
        )

    def images(self, indices: np.ndarray | slice | None = None) -> Tensor:
        """Float32 batch ``[B, H, W, 1]`` in [0, 1]."""
        selected = self.pixels if indices is None else self.pixels[indices]
        return (selected.astype(np.float32) / np.float32(255.0))[..., np.newaxis]

    def targets(self, indices: np.ndarray | slice | None = None) -> TargetBatch:
        pick = slice(None) if indices is None else indices
        return TargetBatch(
            labels=self.labels[pick].astype(np.int64),
            rows=self.rows[pick].astype(np.int64),
            cols=self.cols[pick].astype(np.int64),
        )

    def writer_set(self) -> set[str]:
        return {self.writer_names[index] for index in np.unique(self.writers)}

    def to_samples(self) -> list[GlyphImage]:
        images = self.images()
        return [
            GlyphImage(pixels=images[index], source_writer=self.writer_names[int(self.writers[index])], label=int(self.labels[index]))
            for index in range(len(self))
        ]

    def check_targets(self, grid: AlphabetGrid) -> None:
        for label, row, col in zip(self.labels.tolist(), self.rows.tolist(), self.cols.tolist()):
            triple = derive_targets(label, grid)
            if (triple.row, triple.col) != (row, col):
                raise ValidationError(f"record ({label},{row},{col}) disagrees with grid cell ({triple.row},{triple.col})")


def encode_container(split: DatasetSplit) -> bytes:
    if split.manifest is not None:
        expected = split.manifest.split_counts.get(split.name)
        if expected is not None and expected != len(split):
            raise ValidationError(f"manifest reports {expected} '{split.name}' records, container has {len(split)}")

    arrays: dict[str, Any] = {}
    payloads: list[bytes] = []
    offset = 0
    for name, tag in _ARRAYS:
        values = np.ascontiguousarray(getattr(split, name), dtype=_DTYPES[tag])
        raw = values.tobytes()
        arrays[name] = {"dtype": tag, "shape": list(values.shape), "offset": offset}
        payloads.append(raw)
        offset += len(raw)

    header = json.dumps(
        {
            "split": split.name,
            "canvas_size": split.canvas_size,
            "count": len(split),
            "arrays": arrays,
            "writer_names": split.writer_names,
            "manifest": split.manifest.to_dict() if split.manifest else None,
        },
        ensure_ascii=False,
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(header)) + header + b"".join(payloads)


def decode_container(blob: bytes) -> DatasetSplit:
    if len(blob) < _PREFIX.size:
        raise FormatError("container shorter than its fixed prefix", len(blob))
    magic, version, header_len = _PREFIX.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad container magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}", 4)
    payload_start = _PREFIX.size + header_len
    if len(blob) < payload_start:
        raise FormatError("container header truncated", len(blob))
    try:
        header = json.loads(blob[_PREFIX.size:payload_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"container header is not valid JSON: {exc}", _PREFIX.size) from exc
    try:
        return _split_from_header(blob, header, payload_start)
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise FormatError(f"container header is missing or has a malformed field: {exc!r}", _PREFIX.size) from exc


def _split_from_header(blob: bytes, header: dict[str, Any], payload_start: int) -> DatasetSplit:
    arrays: dict[str, np.ndarray] = {}
    for name, tag in _ARRAYS:
        spec = header["arrays"][name]
        dtype = _DTYPES[spec["dtype"]]
        shape = tuple(int(dim) for dim in spec["shape"])
        start = payload_start + int(spec["offset"])
        count = int(np.prod(shape, dtype=np.int64))
        end = start + count * dtype.itemsize
        if end > len(blob):
            raise FormatError(f"'{name}' payload truncated: needs bytes up to {end}", len(blob))
        arrays[name] = np.frombuffer(blob, dtype=dtype, count=count, offset=start).reshape(shape).copy()

    manifest_payload = header.get("manifest")
    return DatasetSplit(
        name=str(header["split"]),
        canvas_size=int(header["canvas_size"]),
        pixels=arrays["pixels"],
        labels=arrays["labels"],
        rows=arrays["rows"],
        cols=arrays["cols"],
        writers=arrays["writers"],
        writer_names=list(header.get("writer_names", [])),
        manifest=DatasetManifest.from_dict(manifest_payload) if manifest_payload else None,
    )


def manifest_path_for(path: Path) -> Path:
    return path.with_name(path.stem + ".manifest.json")


def write_container(split: DatasetSplit, path: Path) -> None:
    blob = encode_container(split)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_name(path.name + ".tmp")
    tmp_path.write_bytes(blob)
    os.replace(tmp_path, path)
    if split.manifest is not None:
        manifest_path_for(path).write_text(
            json.dumps(split.manifest.to_dict(), ensure_ascii=False, indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    LOGGER.info("Container written: %s (%s, %d records, %d bytes)", path, split.name, len(split), len(blob))


def read_container(path: Path, grid: AlphabetGrid | None = None) -> DatasetSplit:
    split = decode_container(path.read_bytes())
    if grid is not None:
        split.check_targets(grid)
    LOGGER.info("Container loaded: %s (%s, %d records)", path, split.name, len(split))
    return split


def find_split_file(data_dir: Path, name: str) -> Path:
    return data_dir / f"{name}.amcr"
