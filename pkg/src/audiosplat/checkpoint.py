"""Flat binary checkpoint container for named parameter arrays.

Layout (all integers little-endian):

    bytes 0..3    magic b"ASCK"
    bytes 4..7    format version, uint32 (currently 1)
    bytes 8..11   entry count, uint32
    per entry:
        name length, uint32
        name bytes, utf-8
        ndim, uint32
        dims, uint32 * ndim
    payload: for each entry in header order, the array values as
        little-endian float32, row-major, no padding.

Values are stored at float32; models that must round-trip bit-exactly keep
their parameters at float32 in memory.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"ASCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    """Write named arrays; entries are stored in sorted-name order."""
    path = Path(path)
    names = sorted(arrays)
    header = [MAGIC, struct.pack("<II", VERSION, len(names))]
    payload = []
    for name in names:
        arr = np.ascontiguousarray(arrays[name], dtype="<f4")
        raw_name = name.encode("utf-8")
        header.append(struct.pack("<I", len(raw_name)))
        header.append(raw_name)
        header.append(struct.pack("<I", arr.ndim))
        header.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        payload.append(arr.tobytes())
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(b"".join(header))
        f.write(b"".join(payload))
    tmp.replace(path)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint container (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported container version {version}")
    off = 12
    entries: list[tuple[str, tuple[int, ...]]] = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        entries.append((name, shape))
    out: dict[str, np.ndarray] = {}
    for name, shape in entries:
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(shape)
        off += 4 * n
        out[name] = arr.copy()
    if off != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after payload")
    return out
