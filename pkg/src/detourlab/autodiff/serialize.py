"""DTCK named-tensor container.

Layout (little-endian): magic ``DTCK``, version u32, count u32, then per
tensor: name length u32, UTF-8 name, dtype u8 (0=f32, 1=f64, 2=i64),
rank u8, dims u32[rank], payload.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..core import FormatError

MAGIC = b"DTCK"
VERSION = 1
_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("<i8"): 2}
_DTYPES = {v: k for k, v in _CODES.items()}


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray], version: int = VERSION) -> None:
    parts = [MAGIC, struct.pack("<II", version, len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        arr = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        code = _CODES.get(arr.dtype)
        if code is None:
            raise TypeError(f"{name}: cannot store dtype {arr.dtype}")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_tensors(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    off = 12
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", raw, off)
            off += 4
            name = raw[off:off + n].decode("utf-8")
            off += n
            code, rank = struct.unpack_from("<BB", raw, off)
            off += 2
            dims = struct.unpack_from(f"<{rank}I", raw, off)
            off += 4 * rank
            dt = _DTYPES[code]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
            if off + nbytes > len(raw):
                raise FormatError(f"{path}: truncated payload for {name}")
            out[name] = np.frombuffer(raw, dtype=dt, count=nbytes // dt.itemsize,
                                      offset=off).reshape(dims).copy()
            off += nbytes
    except (struct.error, KeyError) as exc:
        raise FormatError(f"{path}: corrupt container ({exc})") from exc
    return out
