"""A small named-array container used for extractor weights, checkpoints and probes.

Layout (all integers little-endian)::

    magic   b"PEWT"            4 bytes
    version u32                currently 1
    count   u32                number of arrays
    repeated count times:
        name_len u16, name utf-8 bytes
        dtype    u8            0=float32 1=float64 2=int64 3=uint8
        ndim     u8
        dims     u32 * ndim
        data     raw little-endian bytes, C order
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"PEWT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("u1")}
_CODES = {v.str: k for k, v in _DTYPES.items()}


class WeightsFormatError(ValueError):
    pass


def save_weights(path: str | Path, arrays: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr)
            dt = arr.dtype.newbyteorder("<") if arr.dtype.itemsize > 1 else arr.dtype
            if dt.str not in _CODES:
                raise WeightsFormatError(f"unsupported dtype {arr.dtype} for {name!r}")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<BB", _CODES[dt.str], arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
    tmp.replace(path)


def load_weights(path: str | Path) -> dict[str, np.ndarray]:
    """Read every array in file order."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise WeightsFormatError(f"{path}: not a weights container (bad magic)")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise WeightsFormatError(f"{path}: unsupported version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + n].decode("utf-8")
            off += n
            code, ndim = struct.unpack_from("<BB", data, off)
            off += 2
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            dt = _DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if off + nbytes > len(data):
                raise WeightsFormatError(f"{path}: truncated array {name!r}")
            out[name] = np.frombuffer(data, dtype=dt, count=nbytes // dt.itemsize, offset=off).reshape(shape).copy()
            off += nbytes
    except (struct.error, KeyError) as exc:
        raise WeightsFormatError(f"{path}: malformed container ({exc})") from exc
    return out
