"""DXTNSR01 flat tensor files.

Layout: 8-byte magic ``DXTNSR01``, a UTF-8 JSON header line
``{"shape": [...], "dtype": "f64"}`` terminated by ``\\n``, then the
row-major little-endian payload.
"""

from __future__ import annotations

import json
import os

import numpy as np

MAGIC = b"DXTNSR01"
_DTYPES = {"f64": "<f8", "f32": "<f4", "i64": "<i8"}


class TensorFormatError(ValueError):
    pass


def dumps(array, dtype: str = "f64") -> bytes:
    if dtype not in _DTYPES:
        raise TensorFormatError(f"unsupported dtype {dtype!r}")
    arr = np.ascontiguousarray(np.asarray(array), dtype=_DTYPES[dtype])
    header = json.dumps({"shape": list(arr.shape), "dtype": dtype}, separators=(",", ":"))
    return MAGIC + header.encode("utf-8") + b"\n" + arr.tobytes(order="C")


def loads(blob: bytes) -> np.ndarray:
    if blob[:8] != MAGIC:
        raise TensorFormatError("bad magic, not a DXTNSR01 tensor")
    end = blob.find(b"\n", 8)
    if end < 0:
        raise TensorFormatError("missing header terminator")
    header = json.loads(blob[8:end].decode("utf-8"))
    dtype = header.get("dtype")
    if dtype not in _DTYPES:
        raise TensorFormatError(f"unsupported dtype {dtype!r}")
    shape = tuple(int(n) for n in header["shape"])
    payload = blob[end + 1:]
    arr = np.frombuffer(payload, dtype=_DTYPES[dtype])
    if arr.size != int(np.prod(shape, dtype=np.int64)):
        raise TensorFormatError(f"payload has {arr.size} values, header shape is {shape}")
    out = arr.reshape(shape)
    return out.astype(np.float64) if dtype != "i64" else out.astype(np.int64)


def save(path, array, dtype: str = "f64"):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(dumps(array, dtype))


def load(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return loads(fh.read())
