"""The TNSR v1 binary tensor format.

Layout (little-endian)::

    b"TNSR" | u32 version=1 | u8 dtype (0=f64, 1=u8) | u32 ndim | u32 * ndim extents | payload

The payload is row-major. Several blobs may be concatenated in one file;
:func:`decode` returns the offset just past the blob it read.
"""
import struct

import numpy as np

MAGIC = b"TNSR"
VERSION = 1
DTYPES = {0: np.dtype("<f8"), 1: np.dtype("u1")}
CODES = {np.dtype("<f8"): 0, np.dtype("u1"): 1}


class FormatError(ValueError):
    """Malformed, truncated or unsupported TNSR data."""


def encode(array):
    arr = np.asarray(array)
    if arr.dtype.kind == "f":
        arr = arr.astype("<f8", copy=False)
    elif arr.dtype.kind in "iub":
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise FormatError("integer tensors must fit in u8")
        arr = arr.astype("u1", copy=False)
    else:
        raise FormatError(f"unsupported dtype {arr.dtype}")
    code = CODES[arr.dtype]
    header = MAGIC + struct.pack("<IBI", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr).tobytes()


def decode(buf, offset=0):
    """Parse one blob from ``buf`` at ``offset``; returns ``(array, next_offset)``."""
    mv = memoryview(buf)
    if len(mv) - offset < 13:
        raise FormatError("truncated TNSR header")
    if bytes(mv[offset:offset + 4]) != MAGIC:
        raise FormatError("bad magic bytes (expected b'TNSR')")
    version, code, ndim = struct.unpack_from("<IBI", mv, offset + 4)
    if version != VERSION:
        raise FormatError(f"unsupported TNSR version {version}")
    if code not in DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    pos = offset + 13
    if len(mv) - pos < 4 * ndim:
        raise FormatError("truncated TNSR extents")
    shape = struct.unpack_from(f"<{ndim}I", mv, pos)
    pos += 4 * ndim
    dtype = DTYPES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(mv) - pos < nbytes:
        raise FormatError("truncated TNSR payload")
    arr = np.frombuffer(mv[pos:pos + nbytes], dtype=dtype).reshape(shape).copy()
    if code == 0:
        arr = arr.astype(np.float64)
    return arr, pos + nbytes


def save(path, array):
    with open(path, "wb") as fh:
        fh.write(encode(array))


def load(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    arr, end = decode(buf)
    if end != len(buf):
        raise FormatError(f"{path}: trailing bytes after TNSR blob")
    return arr
