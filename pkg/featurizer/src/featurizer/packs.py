"""Writer for the TensorPack container (single-file named float32 arrays).

Layout: 4-byte magic ``TPK1``, uint32 little-endian manifest length, UTF-8
JSON manifest ``{"format_version": 1, "tensors": [{name, dtype, shape,
byte_offset}, ...]}``, zero padding to the next 4-byte boundary, then the
blob: little-endian row-major float32 tensors concatenated in manifest
order, byte offsets relative to the blob start.

This module re-implements the format from its written contract on purpose:
the exporter and the consumer share only the bytes on disk.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"TPK1"
FORMAT_VERSION = 1


def tensor_pack_bytes(entries: Mapping[str, np.ndarray]) -> bytes:
    names = list(entries)
    if len(set(names)) != len(names):
        raise ValueError("duplicate tensor names")
    tensors = []
    blobs = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(entries[name], dtype="<f4")
        tensors.append({"name": name, "dtype": "f32",
                        "shape": [int(s) for s in arr.shape],
                        "byte_offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    manifest = json.dumps({"format_version": FORMAT_VERSION,
                           "tensors": tensors},
                          separators=(",", ":")).encode("utf-8")
    pad = (-(len(MAGIC) + 4 + len(manifest))) % 4
    return b"".join([MAGIC, len(manifest).to_bytes(4, "little"), manifest,
                     b"\x00" * pad] + blobs)


def atomic_write_bytes(data: bytes, path: str | os.PathLike) -> None:
    """Write via a temp file in the destination directory + rename, so a
    crashed or concurrent export never leaves a half-written file."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_tensor_pack(entries: Mapping[str, np.ndarray],
                      path: str | os.PathLike) -> None:
    atomic_write_bytes(tensor_pack_bytes(entries), path)
