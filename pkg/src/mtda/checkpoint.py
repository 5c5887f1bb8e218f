"""Self-describing binary container for named parameter tensors.

Layout (all integers little-endian):

    magic "MTDA" | format version u16 | tensor count u32
    per tensor: name length u16 | UTF-8 name | dtype code u8 (0=f32, 1=f64)
                | rank u8 | dims u32[rank] | row-major payload

Used for model checkpoints and for feature files.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from mtda.errors import ContractError

MAGIC = b"MTDA"
FORMAT_VERSION = 1

_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(tensors))]
    for name, arr in tensors.items():
        # ascontiguousarray promotes 0-d to 1-d; restore the original shape
        arr = np.ascontiguousarray(arr).reshape(np.shape(arr))
        if arr.dtype not in _DTYPE_CODES:
            raise ContractError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype(arr.dtype.newbyteorder("<")).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_tensors(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ContractError(f"{path}: not a tensor container (bad magic)")
    version, count = struct.unpack_from("<HI", data, 4)
    if version != FORMAT_VERSION:
        raise ContractError(f"{path}: unsupported container version {version}")
    offset = 10
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        code, rank = struct.unpack_from("<BB", data, offset)
        offset += 2
        dims = struct.unpack_from(f"<{rank}I", data, offset)
        offset += 4 * rank
        dtype = _CODE_DTYPES[code]
        n_bytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        arr = np.frombuffer(data[offset : offset + n_bytes], dtype=dtype)
        offset += n_bytes
        out[name] = arr.reshape(dims).copy()
    return out
