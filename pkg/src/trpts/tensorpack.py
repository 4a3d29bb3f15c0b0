"""TRPT tensor container: named dense arrays in one little-endian binary file.

Layout: magic "TRPT", format version (u32), entry count (u32), then per
entry: name length (u32) + UTF-8 name, dtype code (u8), rank (u8), dims
(u64 each), raw little-endian payload. Supported dtypes: 0=f32, 1=f64,
2=u8, 3=i64.
"""

from __future__ import annotations

import struct
from typing import Dict

import numpy as np

from .errors import InputError

MAGIC = b"TRPT"
VERSION = 1

_CODE_TO_DTYPE = {0: "<f4", 1: "<f8", 2: "u1", 3: "<i8"}
_KIND_TO_CODE = {("f", 4): 0, ("f", 8): 1, ("u", 1): 2, ("i", 8): 3}


def _dtype_code(arr: np.ndarray) -> int:
    key = (arr.dtype.kind, arr.dtype.itemsize)
    if key not in _KIND_TO_CODE:
        raise InputError(f"unsupported dtype {arr.dtype}; supported: f32, f64, u8, i64")
    return _KIND_TO_CODE[key]


def write_tensorpack(path, entries: Dict[str, np.ndarray]) -> None:
    """Write name -> array pairs; names must be unique (dict guarantees it)."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(entries)))
        for name, value in entries.items():
            arr = np.ascontiguousarray(value)
            code = _dtype_code(arr)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BB", code, arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(arr.astype(_CODE_TO_DTYPE[code], copy=False).tobytes())


def read_tensorpack(path) -> Dict[str, np.ndarray]:
    """Read a pack back; validates magic, version, uniqueness, payload sizes."""
    with open(path, "rb") as fh:
        blob = fh.read()
    view = memoryview(blob)
    if bytes(view[:4]) != MAGIC:
        raise InputError(f"{path}: not a TRPT tensor pack")
    version, count = struct.unpack_from("<II", view, 4)
    if version != VERSION:
        raise InputError(f"{path}: unsupported format version {version}")
    offset = 12
    out: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", view, offset)
        offset += 4
        name = bytes(view[offset:offset + name_len]).decode("utf-8")
        offset += name_len
        code, rank = struct.unpack_from("<BB", view, offset)
        offset += 2
        if code not in _CODE_TO_DTYPE:
            raise InputError(f"{path}: unknown dtype code {code} for entry {name!r}")
        dims = struct.unpack_from(f"<{rank}Q" if rank else "<0Q", view, offset)
        offset += 8 * rank
        dtype = np.dtype(_CODE_TO_DTYPE[code])
        n_items = 1
        for dim in dims:
            n_items *= dim
        nbytes = n_items * dtype.itemsize
        if offset + nbytes > len(blob):
            raise InputError(f"{path}: truncated payload for entry {name!r}")
        if name in out:
            raise InputError(f"{path}: duplicate entry name {name!r}")
        arr = np.frombuffer(view[offset:offset + nbytes], dtype=dtype).reshape(dims)
        out[name] = arr.copy()
        offset += nbytes
    if offset != len(blob):
        raise InputError(f"{path}: {len(blob) - offset} trailing bytes after last entry")
    return out
