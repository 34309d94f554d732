"""TensorPack: a single-file container for named float32 arrays.

Layout: 4-byte magic ``TPK1``, uint32 little-endian manifest length, UTF-8
JSON manifest, zero padding to the next 4-byte boundary, then the blob.
The manifest is ``{"format_version": 1, "tensors": [{name, dtype, shape,
byte_offset}, ...]}`` with byte offsets relative to the blob start; tensors
are little-endian row-major float32, concatenated in manifest order.
"""

from __future__ import annotations

import json
import os
from typing import Mapping

import numpy as np

MAGIC = b"TPK1"
FORMAT_VERSION = 1


class TensorPackError(ValueError):
    """Malformed or inconsistent TensorPack file."""


def write_tensor_pack(entries: Mapping[str, np.ndarray], path: str | os.PathLike):
    """Write named arrays; insertion order of `entries` is preserved."""
    names = list(entries)
    if len(set(names)) != len(names):
        raise TensorPackError("duplicate tensor names")
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
    manifest = json.dumps({"format_version": FORMAT_VERSION, "tensors": tensors},
                          separators=(",", ":")).encode("utf-8")
    pad = (-(len(MAGIC) + 4 + len(manifest))) % 4
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(manifest).to_bytes(4, "little"))
        fh.write(manifest)
        fh.write(b"\x00" * pad)
        for blob in blobs:
            fh.write(blob)


def read_tensor_pack(path: str | os.PathLike) -> dict[str, np.ndarray]:
    """Read a pack; raises TensorPackError on any structural violation."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise TensorPackError(f"bad magic in {path}")
    if len(raw) < 8:
        raise TensorPackError("truncated header")
    man_len = int.from_bytes(raw[4:8], "little")
    man_end = 8 + man_len
    if man_end > len(raw):
        raise TensorPackError("truncated manifest")
    try:
        manifest = json.loads(raw[8:man_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise TensorPackError(f"unreadable manifest: {e}") from e
    if manifest.get("format_version") != FORMAT_VERSION:
        raise TensorPackError(f"unsupported format_version {manifest.get('format_version')!r}")
    blob_start = man_end + ((-man_end) % 4)
    blob = raw[blob_start:]

    out: dict[str, np.ndarray] = {}
    spans: list[tuple[int, int]] = []
    for rec in manifest["tensors"]:
        name = rec["name"]
        if name in out:
            raise TensorPackError(f"duplicate tensor name {name!r}")
        if rec["dtype"] != "f32":
            raise TensorPackError(f"unsupported dtype {rec['dtype']!r} for {name!r}")
        shape = tuple(int(s) for s in rec["shape"])
        if any(s < 0 for s in shape):
            raise TensorPackError(f"negative dimension in shape of {name!r}")
        off = int(rec["byte_offset"])
        if off % 4 != 0:
            raise TensorPackError(f"unaligned byte_offset {off} for {name!r}")
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        end = off + nbytes
        if end > len(blob):
            raise TensorPackError(f"truncated blob: {name!r} needs {end} bytes, have {len(blob)}")
        for s, e in spans:
            if off < e and s < end:
                raise TensorPackError(f"overlapping offsets at {name!r}")
        spans.append((off, end))
        out[name] = np.frombuffer(blob, dtype="<f4", count=nbytes // 4,
                                  offset=off).reshape(shape).copy()
    expected = sum(e - s for s, e in spans)
    if len(blob) != expected:
        raise TensorPackError(f"blob length {len(blob)} != manifest total {expected}")
    return out


def inspect_tensor_pack(path: str | os.PathLike) -> list[dict]:
    """Validate a pack and return its manifest records (with element stats)."""
    entries = read_tensor_pack(path)
    report = []
    for name, arr in entries.items():
        report.append({
            "name": name, "dtype": "f32", "shape": list(arr.shape),
            "min": float(arr.min()) if arr.size else None,
            "max": float(arr.max()) if arr.size else None,
            "finite": bool(np.isfinite(arr).all()) if arr.size else True,
        })
    return report
