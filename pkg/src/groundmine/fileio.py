"""Low-level binary container helpers.

All on-disk formats in this package share one layout discipline: a 4-byte
ASCII magic, a little-endian u32 version, format-specific u32 header fields,
then little-endian float32 / u32 payloads. Readers validate magic, version,
and exact payload length; writers produce byte-deterministic output.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from .errors import FormatError

_U32 = struct.Struct("<I")


def write_u32(fh: BinaryIO, value: int) -> None:
    if not 0 <= value <= 0xFFFFFFFF:
        raise FormatError(f"u32 field out of range: {value}")
    fh.write(_U32.pack(value))


def read_exact(fh: BinaryIO, nbytes: int, what: str) -> bytes:
    buf = fh.read(nbytes)
    if len(buf) != nbytes:
        raise FormatError(f"truncated file: expected {nbytes} bytes for {what}, got {len(buf)}")
    return buf


def read_u32(fh: BinaryIO, what: str) -> int:
    return _U32.unpack(read_exact(fh, 4, what))[0]


def write_magic(fh: BinaryIO, magic: bytes, version: int) -> None:
    assert len(magic) == 4
    fh.write(magic)
    write_u32(fh, version)


def check_magic(fh: BinaryIO, magic: bytes, version: int) -> None:
    got = read_exact(fh, 4, "magic")
    if got != magic:
        raise FormatError(f"bad magic: expected {magic!r}, got {got!r}")
    got_version = read_u32(fh, "version")
    if got_version != version:
        raise FormatError(f"unsupported version {got_version} (expected {version})")


def write_f32_array(fh: BinaryIO, arr: np.ndarray) -> None:
    """Write arr as little-endian float32, C order, no header."""
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_f32_array(fh: BinaryIO, shape: tuple[int, ...], what: str) -> np.ndarray:
    count = int(np.prod(shape)) if shape else 1
    buf = read_exact(fh, 4 * count, what)
    return np.frombuffer(buf, dtype="<f4").astype(np.float32).reshape(shape)


def write_u32_array(fh: BinaryIO, arr: np.ndarray) -> None:
    fh.write(np.ascontiguousarray(arr, dtype="<u4").tobytes())


def read_u32_array(fh: BinaryIO, shape: tuple[int, ...], what: str) -> np.ndarray:
    count = int(np.prod(shape)) if shape else 1
    buf = read_exact(fh, 4 * count, what)
    return np.frombuffer(buf, dtype="<u4").astype(np.uint32).reshape(shape)


def expect_eof(fh: BinaryIO, what: str) -> None:
    extra = fh.read(1)
    if extra:
        raise FormatError(f"trailing data after {what}")
