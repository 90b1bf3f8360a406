"""Single-file binary checkpoints.

Byte layout (all integers little-endian):

    offset  size  field
    0       8     magic b"SRCNCKPT"
    8       4     format version (uint32, currently 1)
    12      4     config length L (uint32)
    16      L     config, UTF-8 JSON object
    16+L    4     record count N (uint32)
    ...           N records, each:
                    uint16  name length n
                    n       name, UTF-8
                    uint8   dtype code (0=float64, 1=float32, 2=int64)
                    uint8   ndim
                    ndim*8  extents (int64 each)
                    ...     raw array data, little-endian, C order

Float64 arrays round-trip bit-exactly. Arbitrary named records are
allowed; model parameters use their dotted module path, optimizer and
trainer state use reserved "opt." / "trainer." prefixes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"SRCNCKPT"
VERSION = 1

_DTYPE_CODES = {
    np.dtype("<f8"): 0,
    np.dtype("<f4"): 1,
    np.dtype("<i8"): 2,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


class CheckpointError(RuntimeError):
    pass


def write_checkpoint(path, config: dict, arrays: dict) -> None:
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr)
            le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            code = _DTYPE_CODES.get(le.dtype)
            if code is None:
                raise CheckpointError(f"record {name}: unsupported dtype {arr.dtype}")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BB", code, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
            fh.write(le.tobytes())


def read_checkpoint(path):
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        (clen,) = struct.unpack("<I", fh.read(4))
        config = json.loads(fh.read(clen).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        arrays = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            code, ndim = struct.unpack("<BB", fh.read(2))
            shape = struct.unpack(f"<{ndim}q", fh.read(8 * ndim))
            dtype = _CODE_DTYPES[code]
            raw = fh.read(int(np.prod(shape, dtype=np.int64)) * dtype.itemsize)
            arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return config, arrays
