"""Binary tensor container.

Layout (little-endian): magic ``b"USCT"``, version u16 (=1), dtype code u8
(1=float32, 2=float64, 3=uint8), ndim u8, ndim x u64 dims, row-major payload,
then optionally a u32 byte length followed by UTF-8 metadata.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"USCT"
VERSION = 1
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("u1")}
CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2, np.dtype("uint8"): 3}


class TensorFileError(ValueError):
    pass


def encode_tensor(array: np.ndarray, metadata: str | dict | None = None) -> bytes:
    arr = np.asarray(array)
    if arr.dtype == bool:
        arr = arr.astype(np.uint8)
    code = CODES.get(arr.dtype.newbyteorder("="))
    if code is None:
        raise TypeError(f"unsupported dtype {arr.dtype}; use float32, float64 or uint8")
    if arr.ndim > 255:
        raise ValueError("too many dimensions")
    if code != 3 and not np.all(np.isfinite(arr)):
        raise ValueError("refusing to write non-finite values")
    parts = [MAGIC, struct.pack("<HBB", VERSION, code, arr.ndim),
             struct.pack(f"<{arr.ndim}Q", *arr.shape),
             np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()]
    if metadata is not None:
        text = metadata if isinstance(metadata, str) else json.dumps(metadata, sort_keys=True)
        raw = text.encode("utf-8")
        parts += [struct.pack("<I", len(raw)), raw]
    return b"".join(parts)


def decode_tensor(buf: bytes) -> tuple[np.ndarray, str | None]:
    """Parse a tensor; errors name the byte offset where the data went wrong."""
    if len(buf) < 8:
        raise TensorFileError(f"header truncated at byte {len(buf)}: need 8 bytes")
    if buf[:4] != MAGIC:
        raise TensorFileError(f"bad magic {buf[:4]!r} at byte 0, expected {MAGIC!r}")
    version, code, ndim = struct.unpack_from("<HBB", buf, 4)
    if version != VERSION:
        raise TensorFileError(f"unsupported version {version} at byte 4")
    if code not in DTYPES:
        raise TensorFileError(f"unknown dtype code {code} at byte 6")
    pos = 8
    if len(buf) < pos + 8 * ndim:
        raise TensorFileError(f"dimension block truncated at byte {len(buf)}: expected {pos + 8 * ndim} bytes")
    shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
    pos += 8 * ndim
    dtype = DTYPES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(buf) < pos + nbytes:
        raise TensorFileError(f"payload truncated at byte {pos}: expected {nbytes} bytes, got {len(buf) - pos}")
    arr = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos).reshape(shape)
    arr = arr.astype(dtype.newbyteorder("="))
    pos += nbytes
    meta = None
    if pos < len(buf):
        if len(buf) < pos + 4:
            raise TensorFileError(f"metadata length truncated at byte {pos}")
        (length,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        if len(buf) != pos + length:
            raise TensorFileError(f"metadata at byte {pos}: expected {length} bytes, got {len(buf) - pos}")
        try:
            meta = buf[pos:].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise TensorFileError(f"metadata at byte {pos} is not UTF-8") from exc
    return arr, meta


def write_tensor(path, array: np.ndarray, metadata: str | dict | None = None) -> None:
    Path(path).write_bytes(encode_tensor(array, metadata))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())[0]


def read_tensor_with_metadata(path) -> tuple[np.ndarray, str | None]:
    return decode_tensor(Path(path).read_bytes())
