"""Binary tensor (``.tns``) and 8-bit PGM readers/writers.

``.tns`` layout (all little-endian)::

    b"TNSR" | u16 version=1 | u8 dtype (1=f32, 2=u8) | u8 ndim (1-4)
    | ndim x u32 dims | row-major payload
"""

import re
import struct
from pathlib import Path

import numpy as np

from .exceptions import FormatError, InvalidInputError

MAGIC = b"TNSR"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("u1")}
_CODES = {np.dtype("<f4"): 1, np.dtype("u1"): 2}
_MAX_PAYLOAD = 1 << 40


def encode_tensor(arr):
    arr = np.asarray(arr)
    if arr.dtype.kind == "f":
        arr = arr.astype("<f4")
    elif arr.dtype == np.uint8:
        pass
    elif arr.dtype.kind in "iub" and arr.size and (arr.min() < 0 or arr.max() > 255):
        raise InvalidInputError("integer tensors must fit in u8")
    else:
        arr = arr.astype("u1")
    if not 1 <= arr.ndim <= 4:
        raise InvalidInputError(f"ndim must be 1-4, got {arr.ndim}")
    header = MAGIC + struct.pack("<HBB", VERSION, _CODES[arr.dtype], arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr).tobytes()


def decode_tensor(buf):
    buf = bytes(buf)
    if len(buf) < 8:
        if buf[: len(MAGIC)] != MAGIC[: len(buf)]:
            raise FormatError("bad magic", offset=0)
        raise FormatError(f"truncated header: {len(buf)} bytes", offset=len(buf))
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}", offset=0)
    version, code, ndim = struct.unpack_from("<HBB", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}", offset=6)
    if not 1 <= ndim <= 4:
        raise FormatError(f"ndim {ndim} outside 1-4", offset=7)
    dims_end = 8 + 4 * ndim
    if len(buf) < dims_end:
        raise FormatError("truncated dimension list", offset=len(buf))
    dims = struct.unpack_from(f"<{ndim}I", buf, 8)
    dtype = _DTYPES[code]
    nbytes = dtype.itemsize
    for d in dims:
        nbytes *= d
        if nbytes > _MAX_PAYLOAD:
            raise FormatError(f"dimensions {dims} overflow the payload limit", offset=8)
    have = len(buf) - dims_end
    if have < nbytes:
        raise FormatError(f"truncated payload: need {nbytes} bytes, have {have}", offset=len(buf))
    if have > nbytes:
        raise FormatError(f"{have - nbytes} trailing bytes after payload", offset=dims_end + nbytes)
    return np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=dims_end).reshape(dims).copy()


def write_tensor(arr, path):
    Path(path).write_bytes(encode_tensor(arr))


def read_tensor(path):
    return decode_tensor(Path(path).read_bytes())


_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def write_pgm(labels, path):
    arr = np.asarray(labels)
    if arr.ndim != 2:
        raise InvalidInputError(f"PGM needs a 2-D map, got shape {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise InvalidInputError("PGM values must lie in 0-255")
    h, w = arr.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + arr.astype(np.uint8).tobytes())


def read_pgm(path):
    """Read an 8-bit binary PGM (``P5``, maxval 255) into a uint8 array."""
    buf = Path(path).read_bytes()
    pos = 0
    tokens = []
    for _ in range(4):
        m = _PGM_TOKEN.match(buf, pos)
        if m is None:
            raise FormatError("truncated PGM header", offset=pos)
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P5":
        raise FormatError(f"bad PGM magic {tokens[0]!r}", offset=0)
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError("non-numeric PGM header field", offset=pos) from None
    if maxval != 255:
        raise FormatError(f"maxval {maxval} unsupported (need 255)", offset=pos)
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise FormatError("missing whitespace after PGM header", offset=pos)
    pos += 1
    need = w * h
    if len(buf) - pos < need:
        raise FormatError(f"truncated PGM payload: need {need} bytes, have {len(buf) - pos}", offset=len(buf))
    return np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos).reshape(h, w).copy()
