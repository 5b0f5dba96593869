"""Versioned binary container shared by all persisted models.

Layout (all integers little-endian)::

    magic      8 bytes   b"GRNEACKP"
    version    uint32
    hdr_len    uint32
    header     hdr_len bytes of UTF-8 JSON (sorted keys)
    payload    concatenated raw arrays, little-endian
    crc32      uint32 over every preceding byte

The header holds ``kind`` (what model the file stores), a free-form
``config`` and ``meta`` block, and an ``arrays`` index of
``{name, dtype, shape, offset, nbytes}`` records pointing into the payload.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"GRNEACKP"
FORMAT_VERSION = 1
ALLOWED_DTYPES = ("<f4", "<f8", "<i8")


class CheckpointError(ValueError):
    """The file is not a readable checkpoint of the expected kind."""


def write_container(path, kind: str, config: dict, arrays: dict[str, np.ndarray],
                    meta: dict | None = None) -> None:
    index, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        a = np.asarray(arr)
        dtype = a.dtype.newbyteorder("<").str
        if dtype not in ALLOWED_DTYPES:
            raise CheckpointError(f"array {name!r} has unsupported dtype {a.dtype}")
        raw = np.ascontiguousarray(a, dtype=dtype).tobytes()
        index.append({"name": name, "dtype": dtype, "shape": list(a.shape),
                      "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"kind": kind, "config": config, "meta": meta or {}, "arrays": index},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = MAGIC + struct.pack("<II", FORMAT_VERSION, len(header)) + header + b"".join(chunks)
    blob = body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def read_container(path, kind: str | None = None):
    """Return ``(header, arrays)``; raises :class:`CheckpointError` on any defect."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < len(MAGIC) + 12 or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic or too short)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"{path} is truncated or corrupted (checksum mismatch)")
    version, hdr_len = struct.unpack("<II", body[len(MAGIC):len(MAGIC) + 8])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path} has format version {version}, expected {FORMAT_VERSION}")
    start = len(MAGIC) + 8
    header = json.loads(body[start:start + hdr_len].decode("utf-8"))
    if kind is not None and header.get("kind") != kind:
        raise CheckpointError(f"{path} holds a {header.get('kind')!r} model, expected {kind!r}")
    payload = body[start + hdr_len:]
    arrays = {}
    for rec in header["arrays"]:
        end = rec["offset"] + rec["nbytes"]
        if end > len(payload):
            raise CheckpointError(f"array {rec['name']!r} runs past the end of {path}")
        arrays[rec["name"]] = np.frombuffer(payload[rec["offset"]:end], dtype=rec["dtype"]) \
            .reshape(rec["shape"]).copy()
    return header, arrays
