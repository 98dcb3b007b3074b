"""Binary tensor container used by the CLI for bulk float64 data.

Layout, little-endian throughout:

    offset 0   magic bytes  b"BFPT"
    offset 4   format version, uint32 (currently 1)
    offset 8   element type code, uint8 (1 = binary64)
    offset 9   rank, uint8
    offset 10  dims, rank x uint64
    then       payload, row-major float64

The payload holds exactly 8 * product(dims) bytes, so tensors round-trip
bit-exactly.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

__all__ = ["TensorFileError", "read_tensor", "write_tensor", "MAGIC", "VERSION"]

MAGIC = b"BFPT"
VERSION = 1
_DTYPE_FLOAT64 = 1


class TensorFileError(Exception):
    """Malformed tensor file; ``offset`` is the failing byte position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def write_tensor(path: str | Path, tensor: np.ndarray) -> None:
    arr = np.asarray(tensor, dtype=np.float64)  # keeps rank-0 tensors rank 0
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<BB", _DTYPE_FLOAT64, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.astype("<f8").tobytes())


def read_tensor(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise TensorFileError(f"bad magic {data[:4]!r}, expected {MAGIC!r}", 0)
    if len(data) < 10:
        raise TensorFileError("truncated header", len(data))
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise TensorFileError(f"unsupported format version {version}", 4)
    (type_code,) = struct.unpack_from("<B", data, 8)
    if type_code != _DTYPE_FLOAT64:
        raise TensorFileError(f"unsupported element type code {type_code}", 8)
    (rank,) = struct.unpack_from("<B", data, 9)
    dims_end = 10 + 8 * rank
    if len(data) < dims_end:
        raise TensorFileError(f"truncated dims (rank {rank})", len(data))
    dims = struct.unpack_from(f"<{rank}Q", data, 10)
    count = 1
    for d in dims:
        count *= d
    expected = dims_end + 8 * count
    if len(data) != expected:
        raise TensorFileError(
            f"payload is {len(data) - dims_end} bytes, expected {8 * count}",
            min(len(data), expected),
        )
    flat = np.frombuffer(data, dtype="<f8", offset=dims_end, count=count)
    return flat.reshape(dims).astype(np.float64)
