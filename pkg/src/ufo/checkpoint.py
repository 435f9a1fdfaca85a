"""Bit-exact binary checkpoint format.

Layout: magic "UFOCKPT1"; u32 record count; per record: u32 name length,
UTF-8 name, u8 dtype tag, u8 rank, rank x u32 dims, raw little-endian
values. Optimizer state lives under the reserved "__opt__/" name prefix.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import CheckpointError

MAGIC = b"UFOCKPT1"
OPT_PREFIX = "__opt__/"

_TAG_TO_DTYPE = {1: "<f4", 2: "<f8", 3: "<i8"}
_DTYPE_TO_TAG = {np.dtype(v): k for k, v in _TAG_TO_DTYPE.items()}


def save_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr)
            tag = _DTYPE_TO_TAG.get(arr.dtype.newbyteorder("<"))
            if tag is None:
                raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
            data = np.ascontiguousarray(arr.astype(arr.dtype.newbyteorder("<"), copy=False))
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BB", tag, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(data.tobytes())


def _take(buf: memoryview, pos: int, n: int) -> tuple[memoryview, int]:
    if pos + n > len(buf):
        raise CheckpointError("truncated checkpoint file")
    return buf[pos:pos + n], pos + n


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        buf = memoryview(fh.read())
    head, pos = _take(buf, 0, len(MAGIC))
    if bytes(head) != MAGIC:
        raise CheckpointError(f"{path}: bad magic {bytes(head)!r}")
    raw, pos = _take(buf, pos, 4)
    (count,) = struct.unpack("<I", raw)
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        raw, pos = _take(buf, pos, 4)
        (name_len,) = struct.unpack("<I", raw)
        raw, pos = _take(buf, pos, name_len)
        name = bytes(raw).decode("utf-8")
        raw, pos = _take(buf, pos, 2)
        tag, rank = struct.unpack("<BB", raw)
        if tag not in _TAG_TO_DTYPE:
            raise CheckpointError(f"{name}: unknown dtype tag {tag}")
        raw, pos = _take(buf, pos, 4 * rank)
        shape = struct.unpack(f"<{rank}I", raw)
        dtype = np.dtype(_TAG_TO_DTYPE[tag])
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
        raw, pos = _take(buf, pos, n_bytes)
        arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return arrays
