"""Bit-exact on-disk tensor format.

Layout (little-endian throughout):
    8 bytes  magic "HYDRATNS"
    u8       format version (currently 1)
    u8       dtype tag: 0 = float32, 1 = float64
    u8       rank
    5 bytes  zero padding (16-byte header)
    rank*u64 dimensions
    payload  row-major values

float32 is the default for dataset tensors; float64 is used for checkpoints so
that resumed training is bit-identical.
"""
import struct

import numpy as np

from .errors import TensorFormatError

MAGIC = b"HYDRATNS"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1}
_MAX_ELEMENTS = 1 << 32  # refuse absurd shapes before allocating


def save_tensor(path, tensor, dtype=np.float32):
    arr = np.asarray(tensor, dtype=dtype)
    if not arr.flags["C_CONTIGUOUS"]:
        # np.ascontiguousarray would promote 0-d scalars to 1-d, so it is
        # only applied on the non-contiguous (necessarily >= 1-d) path
        arr = np.ascontiguousarray(arr)
    tag = _TAGS.get(arr.dtype)
    if tag is None:
        raise TensorFormatError(f"unsupported dtype {arr.dtype}")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<BBB5x", VERSION, tag, arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        f.write(arr.tobytes())


def load_tensor(path):
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 16 or data[:8] != MAGIC:
        raise TensorFormatError(f"{path}: bad magic")
    version, tag, rank = struct.unpack_from("<BBB", data, 8)
    if version != VERSION:
        raise TensorFormatError(f"{path}: unsupported version {version}")
    if tag not in _DTYPES:
        raise TensorFormatError(f"{path}: unknown dtype tag {tag}")
    dims_end = 16 + 8 * rank
    if len(data) < dims_end:
        raise TensorFormatError(f"{path}: truncated header")
    shape = struct.unpack_from(f"<{rank}Q", data, 16)
    n_elem = 1
    for d in shape:
        n_elem *= d
    if n_elem > _MAX_ELEMENTS:
        raise TensorFormatError(f"{path}: shape {shape} overflows sanity limit")
    dt = _DTYPES[tag]
    expected = dims_end + n_elem * dt.itemsize
    if len(data) != expected:
        raise TensorFormatError(f"{path}: payload length {len(data) - dims_end}, "
                                f"expected {n_elem * dt.itemsize}")
    return np.frombuffer(data[dims_end:], dtype=dt).reshape(shape).copy()
