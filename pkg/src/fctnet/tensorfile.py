"""Binary tensor file format ".fctt".

Layout: magic `FCTT`, one version byte (=1), one ndim byte, then ndim
little-endian uint32 extents, then the row-major float32 payload,
little-endian. Round-trips are bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ValidationError

MAGIC = b"FCTT"
VERSION = 1


def write_fctt(path, array):
    arr = np.ascontiguousarray(array, dtype="<f4")
    if arr.ndim > 255:
        raise ValidationError("fctt: too many dimensions")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<BB", VERSION, arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(arr.tobytes())


def read_fctt(path):
    with open(path, "rb") as f:
        head = f.read(6)
        if len(head) != 6 or head[:4] != MAGIC:
            raise ValidationError(f"{path}: not a .fctt file (bad magic)")
        version, ndim = struct.unpack("<BB", head[4:6])
        if version != VERSION:
            raise ValidationError(f"{path}: unsupported .fctt version {version}")
        shape_bytes = f.read(4 * ndim)
        if len(shape_bytes) != 4 * ndim:
            raise ValidationError(f"{path}: truncated .fctt header")
        shape = struct.unpack(f"<{ndim}I", shape_bytes)
        count = 1
        for s in shape:
            count *= s
        payload = f.read(4 * count)
        if len(payload) != 4 * count:
            raise ValidationError(f"{path}: truncated .fctt payload")
        if f.read(1):
            raise ValidationError(f"{path}: trailing bytes after .fctt payload")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
