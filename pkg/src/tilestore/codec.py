"""Deterministic lossless tile codec and raw ``.y8`` frame files.

Chunk file layout (little-endian)::

    b"TASMCHK1" | u16 x | u16 y | u16 w | u16 h | u32 frame_count | u16 flags
    repeated frame_count times: u32 block_length | zlib block

Block 0 is the keyframe raster; block ``i`` holds ``frame[i] - frame[i-1]``
(mod 256).  Frame ``f`` therefore needs blocks ``0..f``.
"""
from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import CorruptDataError, TileStoreError

MAGIC = b"TASMCHK1"
HEADER = struct.Struct("<4HIH")
_LEN = struct.Struct("<I")
LEVEL = 1
CODEC_VERSION = 1


def encode_chunk(frames: np.ndarray, rect) -> bytes:
    """Encode a ``(n, h, w)`` uint8 tile sequence located at ``rect=(x, y, w, h)``."""
    frames = np.ascontiguousarray(frames, dtype=np.uint8)
    n, h, w = frames.shape
    x, y, rw, rh = rect
    if (rw, rh) != (w, h):
        raise ValueError(f"rect {rect} does not match tile shape {w}x{h}")
    parts = [MAGIC, HEADER.pack(x, y, w, h, n, CODEC_VERSION)]
    blocks = [zlib.compress(frames[0].tobytes(), LEVEL)]
    if n > 1:
        deltas = np.subtract(frames[1:], frames[:-1])
        blocks.extend(zlib.compress(d.tobytes(), LEVEL) for d in deltas)
    for b in blocks:
        parts.append(_LEN.pack(len(b)))
        parts.append(b)
    return b"".join(parts)


def read_header(data) -> tuple:
    if bytes(data[:8]) != MAGIC:
        raise CorruptDataError("not a tile chunk")
    x, y, w, h, n, _flags = HEADER.unpack_from(data, 8)
    return (x, y, w, h), n


def decode_chunk(data, upto=None) -> np.ndarray:
    """Decode frames ``0..upto`` (inclusive; default all) of a chunk."""
    (x, y, w, h), n = read_header(data)
    count = n if upto is None else upto + 1
    if not 0 < count <= n:
        raise TileStoreError(f"frame {upto} outside chunk of {n} frames")
    out = np.empty((count, h, w), dtype=np.uint8)
    flat = out.reshape(count, h * w)
    data = memoryview(data)
    pos = 8 + HEADER.size
    for i in range(count):
        (ln,) = _LEN.unpack_from(data, pos)
        pos += 4
        raw = zlib.decompress(data[pos:pos + ln])
        pos += ln
        if len(raw) != h * w:
            raise CorruptDataError("block size mismatch")
        flat[i] = np.frombuffer(raw, dtype=np.uint8)
        if i:
            np.add(flat[i - 1], flat[i], out=flat[i])
    return out


def read_y8(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().decode("ascii").split()
        if len(header) != 4 or header[0] != "Y8":
            raise TileStoreError(f"{path}: bad .y8 header")
        w, h, n = (int(v) for v in header[1:])
        data = f.read()
    if len(data) != w * h * n:
        raise TileStoreError(f"{path}: expected {w * h * n} bytes of pixels, found {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(n, h, w).copy()


def write_y8(path, frames: np.ndarray):
    frames = np.ascontiguousarray(frames, dtype=np.uint8)
    if frames.ndim == 2:
        frames = frames[None]
    n, h, w = frames.shape
    with open(path, "wb") as f:
        f.write(f"Y8 {w} {h} {n}\n".encode("ascii"))
        f.write(frames.tobytes())
