# tensor_io.py
"""Binary tensor files: uint32 ndim, uint32 dims..., then row-major little-endian float32."""
from pathlib import Path

import numpy as np

from refseg.errors import DatasetFormatError

_HEADER_DTYPE = np.dtype("<u4")
_DATA_DTYPE = np.dtype("<f4")


def write_tensor(path: Path, array: np.ndarray):
    array = np.ascontiguousarray(array, dtype=_DATA_DTYPE)
    header = np.array([array.ndim, *array.shape], dtype=_HEADER_DTYPE)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(header.tobytes())
        f.write(array.tobytes(order="C"))


def read_tensor(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise DatasetFormatError(f"{path}: file too short for a tensor header")
    ndim = int(np.frombuffer(raw[:4], dtype=_HEADER_DTYPE)[0])
    header_bytes = 4 * (1 + ndim)
    if len(raw) < header_bytes:
        raise DatasetFormatError(f"{path}: truncated header ({ndim} dims)")
    shape = tuple(int(d) for d in np.frombuffer(raw[4:header_bytes], dtype=_HEADER_DTYPE))
    expected = int(np.prod(shape, dtype=np.int64)) * _DATA_DTYPE.itemsize
    if len(raw) - header_bytes != expected:
        raise DatasetFormatError(
            f"{path}: expected {expected} data bytes for shape {shape}, found {len(raw) - header_bytes}")
    return np.frombuffer(raw[header_bytes:], dtype=_DATA_DTYPE).reshape(shape).copy()
