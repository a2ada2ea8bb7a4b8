"""Binary tensor files and the in-memory feature-map container.

The on-disk layout is little endian throughout:

    magic "MSVF" | u32 version (=1) | u8 dtype (=1, float32)
    | u32 rank | rank x u32 dims | row-major float32 payload

so the header occupies 13 + 4*rank bytes and the payload exactly
4 * prod(dims) bytes. Values are stored as float32 and writers reject
anything that is not finite in that precision.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    DimensionError,
    NonFiniteError,
    TensorFormatError,
    TruncatedFileError,
    UnsupportedDtypeError,
    UnsupportedVersionError,
)

MAGIC = b"MSVF"
VERSION = 1
DTYPE_FLOAT32 = 1

# Feature maps entering the pipeline must support a 3x3 pooling window.
MIN_POOLABLE_SIDE = 3

PathLike = "str | Path"


def write_tensor(path, shape, values) -> None:
    """Write a dense float32 tensor file; exact inverse of read_tensor."""
    dims = [int(s) for s in shape]
    if not dims or any(s <= 0 for s in dims):
        raise DimensionError(f"shape must be positive integers, got {list(shape)}")
    flat = np.asarray(values).reshape(-1)
    expected = int(np.prod(dims))
    if flat.size != expected:
        raise DimensionError(f"shape {dims} needs {expected} values, got {flat.size}")
    with np.errstate(over="ignore"):
        payload = flat.astype("<f4")
    if not np.all(np.isfinite(payload)):
        raise NonFiniteError(f"refusing to write values not finite in float32: {path}")
    header = struct.pack("<4sIBI", MAGIC, VERSION, DTYPE_FLOAT32, len(dims))
    header += struct.pack(f"<{len(dims)}I", *dims)
    Path(path).write_bytes(header + payload.tobytes())


def _parse_header(data: bytes, path) -> tuple[tuple[int, ...], int]:
    if len(data) >= 4 and data[:4] != MAGIC:
        raise BadMagicError(f"{path}: expected magic {MAGIC!r}, found {data[:4]!r}")
    if len(data) < 13:
        raise TruncatedFileError(f"{path}: {len(data)} bytes is too short for a header")
    _, version, dtype, rank = struct.unpack_from("<4sIBI", data)
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: version {version} not supported")
    if dtype != DTYPE_FLOAT32:
        raise UnsupportedDtypeError(f"{path}: dtype code {dtype} not supported")
    if rank == 0:
        raise DimensionError(f"{path}: rank 0 tensors are not allowed")
    header_end = 13 + 4 * rank
    if len(data) < header_end:
        raise TruncatedFileError(f"{path}: header cut off before {rank} dims")
    dims = struct.unpack_from(f"<{rank}I", data, 13)
    if any(d == 0 for d in dims):
        raise DimensionError(f"{path}: zero-sized dimension in {dims}")
    return tuple(int(d) for d in dims), header_end


def read_tensor(path) -> tuple[tuple[int, ...], np.ndarray]:
    """Read a tensor file back as (shape, flat float32 values)."""
    data = Path(path).read_bytes()
    shape, offset = _parse_header(data, path)
    count = int(np.prod(shape))
    end = offset + 4 * count
    if len(data) < end:
        raise TruncatedFileError(
            f"{path}: payload declares {count} float32 values but "
            f"{len(data) - offset} bytes follow the header"
        )
    if len(data) > end:
        raise TensorFormatError(f"{path}: {len(data) - end} trailing bytes after payload")
    values = np.frombuffer(data, dtype="<f4", count=count, offset=offset).copy()
    return shape, values


def read_tensor_header(path) -> tuple[int, ...]:
    """Read and validate only the header, checking the file size matches it."""
    p = Path(path)
    with open(p, "rb") as fh:
        head = fh.read(13)
        if len(head) >= 4 and head[:4] != MAGIC:
            raise BadMagicError(f"{path}: expected magic {MAGIC!r}, found {head[:4]!r}")
        if len(head) < 13:
            raise TruncatedFileError(f"{path}: {len(head)} bytes is too short for a header")
        rank = struct.unpack_from("<I", head, 9)[0]
        shape, offset = _parse_header(head + fh.read(4 * rank), path)
    size = p.stat().st_size
    expected = offset + 4 * int(np.prod(shape))
    if size < expected:
        raise TruncatedFileError(f"{path}: file is {expected - size} bytes short of its payload")
    if size > expected:
        raise TensorFormatError(f"{path}: {size - expected} trailing bytes after payload")
    return shape


@dataclass(frozen=True)
class FeatureMap:
    """Dense H x W x C activation grid for one image at one resolution."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 3:
            raise DimensionError(f"feature map must be H x W x C, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise DimensionError(f"feature map has an empty dimension: {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("feature map contains non-finite values")
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


def load_feature_map(path) -> FeatureMap:
    """Load a rank-3 tensor file as a pipeline input map (at least 3x3)."""
    shape, values = read_tensor(path)
    if len(shape) != 3:
        raise DimensionError(f"{path}: expected rank 3, got rank {len(shape)}")
    fmap = FeatureMap(values.reshape(shape))
    if fmap.height < MIN_POOLABLE_SIDE or fmap.width < MIN_POOLABLE_SIDE:
        raise DimensionError(
            f"{path}: pipeline input maps must be at least "
            f"{MIN_POOLABLE_SIDE}x{MIN_POOLABLE_SIDE}, got {fmap.height}x{fmap.width}"
        )
    return fmap


def save_feature_map(path, fmap: FeatureMap) -> None:
    write_tensor(path, fmap.values.shape, fmap.values.reshape(-1))
