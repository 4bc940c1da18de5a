"""Binary container for named parameter matrices.

Layout (all integers little-endian):

    magic   4 bytes  b"ANAE"
    version u32
    then one record per parameter, in order:
        name_len u32, name UTF-8, rows u64, cols u64,
        rows*cols float64 values, row-major, little-endian

Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"ANAE"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_params(path, named_arrays):
    """Write an ordered list of (name, 2-D float64 array) pairs."""
    path = Path(path)
    with open(path, "wb") as fp:
        fp.write(MAGIC)
        fp.write(struct.pack("<I", VERSION))
        for name, arr in named_arrays:
            arr = np.ascontiguousarray(arr, dtype="<f8")
            if arr.ndim != 2:
                raise CheckpointError(f"parameter {name!r} is not 2-D")
            encoded = name.encode("utf-8")
            fp.write(struct.pack("<I", len(encoded)))
            fp.write(encoded)
            fp.write(struct.pack("<QQ", arr.shape[0], arr.shape[1]))
            fp.write(arr.tobytes(order="C"))


def load_params(path):
    """Read back the ordered (name, array) pairs written by ``save_params``."""
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a parameter checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 8
    out = []
    while pos < len(data):
        if pos + 4 > len(data):
            raise CheckpointError("truncated record header")
        (name_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        if pos + 16 > len(data):
            raise CheckpointError(f"truncated shape for parameter {name!r}")
        rows, cols = struct.unpack_from("<QQ", data, pos)
        pos += 16
        nbytes = rows * cols * 8
        if pos + nbytes > len(data):
            raise CheckpointError(f"truncated values for parameter {name!r}")
        arr = np.frombuffer(data[pos : pos + nbytes], dtype="<f8").reshape(rows, cols).copy()
        pos += nbytes
        out.append((name, arr))
    return out
