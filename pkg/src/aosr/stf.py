"""Binary tensor files.

STF layout (all integers little-endian)::

    b"AOSRTNSR" | u8 version=1 | u8 dtype (1=f32, 2=f64) | u8 ndim
    | ndim x u32 extents | row-major payload

Checkpoint container::

    b"AOSRCKPT" | u8 version=1 | u32 entry count
    | per entry: u16 name length, UTF-8 name, embedded STF record
"""

from __future__ import annotations

import io
import math
import struct
import sys
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Mapping

import numpy as np

from .errors import FormatError

STF_MAGIC = b"AOSRTNSR"
CKPT_MAGIC = b"AOSRCKPT"
VERSION = 1

_DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


def encode_stf(arr) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype.byteorder not in ("=", "|"):
        arr = arr.astype(arr.dtype.newbyteorder("="))
    if arr.dtype not in _DTYPE_CODES:
        raise FormatError(f"STF stores float32 or float64 only, got {arr.dtype}")
    if arr.ndim < 1 or arr.ndim > 255:
        raise FormatError(f"STF needs 1..255 dimensions, got {arr.ndim}")
    code = _DTYPE_CODES[arr.dtype]
    header = STF_MAGIC + struct.pack("<BBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=_CODE_DTYPES[code]).tobytes()
    return header + payload


def _read_exact(buf, n, what):
    if n > sys.maxsize:
        raise FormatError(f"implausible STF size: {n} bytes of {what}")
    data = buf.read(n)
    if len(data) != n:
        raise FormatError(f"truncated STF data: expected {n} bytes of {what}, got {len(data)}")
    return data


def read_stf_stream(buf) -> np.ndarray:
    magic = _read_exact(buf, 8, "magic")
    if magic != STF_MAGIC:
        raise FormatError(f"bad STF magic {magic!r}")
    version, code, ndim = struct.unpack("<BBB", _read_exact(buf, 3, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if code not in _CODE_DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    if ndim < 1:
        raise FormatError("STF tensor has zero dimensions")
    dims = struct.unpack(f"<{ndim}I", _read_exact(buf, 4 * ndim, "extents"))
    if any(d < 1 for d in dims):
        raise FormatError(f"invalid extents {dims}")
    dtype = _CODE_DTYPES[code]
    count = math.prod(dims)
    raw = _read_exact(buf, count * dtype.itemsize, "payload")
    return np.frombuffer(raw, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))


def decode_stf(data: bytes, strict: bool = True) -> np.ndarray:
    buf = io.BytesIO(data)
    arr = read_stf_stream(buf)
    if strict and buf.read(1):
        raise FormatError("trailing bytes after STF payload")
    return arr


def write_stf(path, arr):
    Path(path).write_bytes(encode_stf(arr))


def read_stf(path) -> np.ndarray:
    return decode_stf(Path(path).read_bytes())


def encode_checkpoint(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [CKPT_MAGIC, struct.pack("<BI", VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FormatError(f"entry name too long: {name[:40]}...")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(encode_stf(arr))
    return b"".join(parts)


def decode_checkpoint(data: bytes) -> Dict[str, np.ndarray]:
    buf = io.BytesIO(data)
    magic = buf.read(8)
    if magic != CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    head = buf.read(5)
    if len(head) != 5:
        raise FormatError("truncated checkpoint header")
    version, count = struct.unpack("<BI", head)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    out = OrderedDict()
    for k in range(count):
        raw_len = buf.read(2)
        if len(raw_len) != 2:
            raise FormatError(f"truncated checkpoint at entry {k}")
        (n,) = struct.unpack("<H", raw_len)
        raw = buf.read(n)
        if len(raw) != n:
            raise FormatError(f"truncated entry name at entry {k}")
        try:
            name = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"entry {k} name is not UTF-8") from exc
        if name in out:
            raise FormatError(f"duplicate checkpoint entry '{name}'")
        out[name] = read_stf_stream(buf)
    if buf.read(1):
        raise FormatError("trailing bytes after checkpoint entries")
    return out


def write_checkpoint(path, tensors: Mapping[str, np.ndarray]):
    Path(path).write_bytes(encode_checkpoint(tensors))


def read_checkpoint(path) -> Dict[str, np.ndarray]:
    return decode_checkpoint(Path(path).read_bytes())
