"""Parameter checkpoint files.

Layout: ``b"AMCP"``, u16 format version, u32 header length, UTF-8 JSON header
``{"meta": {...}, "tensors": [{"name", "shape", "offset"}, ...]}``, then the
tensors as raw little-endian float32, offsets relative to the payload start.
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path
import struct
from typing import Any

import numpy as np

from fidel_mtl.errors import FormatError


LOGGER = logging.getLogger(__name__)

MAGIC = b"AMCP"
VERSION = 1
_PREFIX = struct.Struct("<4sHI")
_FLOAT = np.dtype("<f4")


def encode_checkpoint(tensors: dict[str, np.ndarray], meta: dict[str, Any] | None = None) -> bytes:
    entries = []
    payloads = []
    offset = 0
    for name, value in tensors.items():
        raw = np.ascontiguousarray(value, dtype=_FLOAT).tobytes()
        entries.append({"name": name, "shape": [int(dim) for dim in np.shape(value)], "offset": offset})
        payloads.append(raw)
        offset += len(raw)

    header = json.dumps(
        {"meta": meta or {}, "tensors": entries},
        ensure_ascii=False,
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(header)) + header + b"".join(payloads)


def decode_checkpoint(blob: bytes) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    if len(blob) < _PREFIX.size:
        raise FormatError("checkpoint shorter than its fixed prefix", len(blob))
    magic, version, header_len = _PREFIX.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)

    payload_start = _PREFIX.size + header_len
    if len(blob) < payload_start:
        raise FormatError("checkpoint header truncated", len(blob))
    try:
        header = json.loads(blob[_PREFIX.size:payload_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"checkpoint header is not valid JSON: {exc}", _PREFIX.size) from exc
    try:
        return _tensors_from_header(blob, header, payload_start)
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise FormatError(f"checkpoint header is missing or has a malformed field: {exc!r}", _PREFIX.size) from exc


def _tensors_from_header(blob: bytes, header: dict[str, Any], payload_start: int) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(int(dim) for dim in entry["shape"])
        start = payload_start + int(entry["offset"])
        end = start + int(np.prod(shape, dtype=np.int64)) * _FLOAT.itemsize
        if end > len(blob):
            raise FormatError(f"tensor '{entry['name']}' payload truncated", len(blob))
        tensors[entry["name"]] = np.frombuffer(blob, dtype=_FLOAT, count=(end - start) // 4, offset=start).reshape(shape).astype(np.float32)
    meta = header.get("meta", {})
    if not isinstance(meta, dict):
        raise TypeError(f"meta must be an object, got {type(meta).__name__}")
    return tensors, meta


def save_checkpoint(path: Path, tensors: dict[str, np.ndarray], meta: dict[str, Any] | None = None) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = encode_checkpoint(tensors, meta)
    tmp_path = path.with_name(path.name + ".tmp")
    tmp_path.write_bytes(blob)
    os.replace(tmp_path, path)
    LOGGER.debug("Checkpoint written: %s (%d tensors, %d bytes)", path, len(tensors), len(blob))


def load_checkpoint(path: Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    tensors, meta = decode_checkpoint(path.read_bytes())
    LOGGER.debug("Checkpoint loaded: %s (%d tensors)", path, len(tensors))
    return tensors, meta
