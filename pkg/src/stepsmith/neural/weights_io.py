"""Binary checkpoint format for named float32 tensors.

Layout, all little-endian: magic ``DDCL``, format version u32, tensor
count u32, then per tensor a u16 name length, the UTF-8 name, a u8
rank, u32 dims, and the raw float32 payload; the file ends with a
CRC32 (of everything before it) as u32. Tensors are written in sorted
name order, so saving the same mapping always produces identical
bytes; loading is order-insensitive because entries are keyed by name.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from stepsmith.errors import CheckpointError

MAGIC = b"DDCL"
VERSION = 1


def save_weights(tensors: dict, path) -> None:
    """Write named arrays (or Tensors) as float32 to one file."""
    out = bytearray()
    out += MAGIC
    out += struct.pack("<II", VERSION, len(tensors))
    for name in sorted(tensors):
        value = tensors[name]
        # note: tobytes() always emits C order, and plain asarray keeps
        # rank-0 values rank-0 (ascontiguousarray would promote them to 1-d)
        arr = np.asarray(getattr(value, "data", value), dtype="<f4")
        encoded = name.encode("utf-8")
        if not 0 < len(encoded) < 65536:
            raise CheckpointError(f"tensor name {name!r} not storable")
        out += struct.pack("<H", len(encoded))
        out += encoded
        out += struct.pack("<B", arr.ndim)
        if arr.ndim:
            out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    Path(path).write_bytes(bytes(out))


def load_weights(path) -> dict:
    """Read a checkpoint back into {name: float32 ndarray}."""
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 8 + 4:
        raise CheckpointError(f"{path}: truncated checkpoint")
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a weights file")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CheckpointError(f"{path}: checksum mismatch, file corrupt")
    version, count = struct.unpack_from("<II", blob, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")

    pos = len(MAGIC) + 8
    end = len(blob) - 4
    tensors: dict = {}

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > end:
            raise CheckpointError(f"{path}: truncated checkpoint")
        piece = blob[pos : pos + n]
        pos += n
        return piece

    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).copy()
        if name in tensors:
            raise CheckpointError(f"{path}: duplicate tensor name {name!r}")
        tensors[name] = arr
    if pos != end:
        raise CheckpointError(f"{path}: trailing bytes after payload")
    return tensors
