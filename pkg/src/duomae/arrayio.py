"""Binary container of named arrays: length-prefixed names, dtype, shape, raw data.

Used for both model checkpoints and on-disk corpus patch files. Round-trips are
bit-exact: the payload is the array's own little-endian bytes, untouched.

Layout:
    magic   4 bytes  b"DMA1"
    count   uint32   number of entries
    entry*  name_len uint32 | name utf-8 | dtype_code uint8 | ndim uint8
            | dims uint64 * ndim | payload
"""

from __future__ import annotations

import io
import struct

import numpy as np

from .errors import ContractError

MAGIC = b"DMA1"

_DTYPE_CODES: dict[str, int] = {
    "float32": 0,
    "float64": 1,
    "int64": 2,
    "uint8": 3,
    "int32": 4,
}
_CODE_DTYPES = {code: np.dtype(name) for name, code in _DTYPE_CODES.items()}


def write_arrays(path: str, arrays: dict[str, np.ndarray]) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dtype_name = arr.dtype.name
        if dtype_name not in _DTYPE_CODES:
            raise ContractError(f"unsupported dtype {dtype_name} for entry {name!r}")
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<I", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<BB", _DTYPE_CODES[dtype_name], arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<Q", dim))
        buf.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def read_arrays(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ContractError(f"{path} is not an array container (bad magic)")
    offset = 4
    (count,) = struct.unpack_from("<I", data, offset)
    offset += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        code, ndim = struct.unpack_from("<BB", data, offset)
        offset += 2
        shape = struct.unpack_from(f"<{ndim}Q", data, offset) if ndim else ()
        offset += 8 * ndim
        dtype = _CODE_DTYPES[code].newbyteorder("<")
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
        payload = data[offset : offset + n_bytes]
        offset += n_bytes
        arrays[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).astype(_CODE_DTYPES[code])
    return arrays
