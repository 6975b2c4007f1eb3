"""Length-prefixed binary records for checkpoints, feature dumps and normalizer files.

A tensor table (all little-endian)::

    u32 count | count x tensor record

    tensor record: u16 name_len | name (UTF-8) | u8 rank | u32 dims[rank] | f32 data[prod(dims)]

The leading count lets a reader tell a truncated table from a short one.
Text blocks (JSON configs) are stored as rank-1 tensors of UTF-8 byte values.
"""

from __future__ import annotations

import struct
from typing import BinaryIO, Iterator, Type

import numpy as np

from .errors import CheckpointError, NotACheckpoint, TruncatedCheckpoint, UnsupportedVersion
from .tracing import make_trace

_trace = make_trace("codec")

MAX_RANK = 8
MAX_NAME = 1024


def read_exact(fp: BinaryIO, n: int, what: str, error: Type[Exception] = TruncatedCheckpoint) -> bytes:
    data = bytearray()
    while len(data) < n:
        chunk = fp.read(n - len(data))
        if not chunk:
            raise error(f"truncated while reading {what}: wanted {n} bytes, got {len(data)}")
        data += chunk
    return bytes(data)


def write_header(fp: BinaryIO, magic: bytes, version: int) -> None:
    fp.write(magic)
    fp.write(struct.pack("<I", version))


def read_header(
    fp: BinaryIO,
    magic: bytes,
    supported: int,
    kind: str,
    not_kind: Type[Exception] = NotACheckpoint,
    bad_version: Type[Exception] = UnsupportedVersion,
    truncated: Type[Exception] = TruncatedCheckpoint,
) -> int:
    head = fp.read(len(magic))
    if head != magic:
        raise not_kind(f"not a {kind}: bad magic {head!r}")
    (version,) = struct.unpack("<I", read_exact(fp, 4, "version", truncated))
    if version != supported:
        raise bad_version(f"unsupported version {version} (expected {supported})")
    return version


def write_u32(fp: BinaryIO, value: int) -> None:
    fp.write(struct.pack("<I", value))


def read_u32(fp: BinaryIO, what: str, error: Type[Exception] = TruncatedCheckpoint) -> int:
    return struct.unpack("<I", read_exact(fp, 4, what, error))[0]


def write_tensor(fp: BinaryIO, name: str, array: np.ndarray) -> None:
    data = np.ascontiguousarray(array, dtype="<f4")
    encoded = name.encode("utf-8")
    if len(encoded) > MAX_NAME:
        raise CheckpointError(f"tensor name too long: {name[:40]}...")
    if data.ndim > MAX_RANK:
        raise CheckpointError(f"tensor {name} has rank {data.ndim} > {MAX_RANK}")
    fp.write(struct.pack("<H", len(encoded)))
    fp.write(encoded)
    fp.write(struct.pack("<B", data.ndim))
    for dim in data.shape:
        fp.write(struct.pack("<I", dim))
    fp.write(data.tobytes())
    _trace(f"write_tensor {name} shape={data.shape}")


def read_tensor(fp: BinaryIO) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<H", read_exact(fp, 2, "tensor name length"))
    if name_len > MAX_NAME:
        raise CheckpointError(f"tensor name length {name_len} exceeds {MAX_NAME}")
    name = read_exact(fp, name_len, "tensor name").decode("utf-8")
    (rank,) = struct.unpack("<B", read_exact(fp, 1, f"rank of {name}"))
    if rank > MAX_RANK:
        raise CheckpointError(f"tensor {name} has rank {rank} > {MAX_RANK}")
    dims = struct.unpack(f"<{rank}I", read_exact(fp, 4 * rank, f"dims of {name}")) if rank else ()
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    raw = read_exact(fp, 4 * count, f"data of {name}")
    array = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(dims)
    _trace(f"read_tensor {name} shape={array.shape}")
    return name, array


def write_table(fp: BinaryIO, tensors: dict[str, np.ndarray]) -> None:
    write_u32(fp, len(tensors))
    for name, array in tensors.items():
        write_tensor(fp, name, array)


def iter_table(fp: BinaryIO) -> Iterator[tuple[str, np.ndarray]]:
    count = read_u32(fp, "tensor count")
    for _ in range(count):
        yield read_tensor(fp)


def text_tensor(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float32)


def tensor_text(array: np.ndarray) -> str:
    return array.astype(np.uint8).tobytes().decode("utf-8")
