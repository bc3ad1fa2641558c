"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"SXTP"  u32 version
    u32 metadata length, UTF-8 metadata  ("key = value" lines, order preserved)
    repeated tensor record:
        u32 name length, UTF-8 name
        u8 rank, rank x u64 dims
        float32 payload, row-major
        u64 CRC-64/XZ of every preceding byte of the record

The metadata carries ``tensors = N`` so a truncated file is detected even when
it ends exactly on a record boundary.  Payloads are float32; loading widens
them to float64 and saving a loaded checkpoint reproduces the file byte for
byte.
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass, field

import numpy as np
from fastcrc import crc64

MAGIC = b"SXTP"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed, truncated or corrupted checkpoint."""


@dataclass
class Checkpoint:
    metadata: dict[str, str] = field(default_factory=dict)
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    version: int = VERSION

    @property
    def step(self) -> int:
        return int(self.metadata.get("step", "0"))

    @property
    def kind(self) -> str:
        return self.metadata.get("kind", "model")

    def section(self, prefix: str) -> dict[str, str]:
        """Metadata entries under ``prefix.`` with the prefix stripped."""
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.metadata.items() if k.startswith(p)}


def _crc(data: bytes) -> int:
    return crc64.xz(data)


def to_bytes(ckpt: Checkpoint) -> bytes:
    meta = dict(ckpt.metadata)
    meta["tensors"] = str(len(ckpt.tensors))
    lines = []
    for key, value in meta.items():
        if "\n" in key or "\n" in str(value) or " = " in key:
            raise CheckpointError(f"metadata entry {key!r} cannot be encoded")
        lines.append(f"{key} = {value}\n")
    meta_bytes = "".join(lines).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", ckpt.version))
    buf.write(struct.pack("<I", len(meta_bytes)))
    buf.write(meta_bytes)
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr)
        name_bytes = name.encode("utf-8")
        record = bytearray()
        record += struct.pack("<I", len(name_bytes)) + name_bytes
        record += struct.pack("<B", arr.ndim)
        record += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        record += np.ascontiguousarray(arr, dtype="<f4").tobytes()
        buf.write(record)
        buf.write(struct.pack("<Q", _crc(bytes(record))))
    return buf.getvalue()


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> None:
    data = to_bytes(ckpt)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk


def from_bytes(data: bytes, expected_shapes: dict[str, tuple[int, ...]] | None = None) -> Checkpoint:
    """Parse checkpoint bytes; ``expected_shapes`` enforces the exact tensor registry."""
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic bytes)")
    (version,) = struct.unpack("<I", r.take(4, "version"))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    (meta_len,) = struct.unpack("<I", r.take(4, "metadata length"))
    try:
        text = r.take(meta_len, "metadata").decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"metadata is not UTF-8: {exc}") from None
    metadata: dict[str, str] = {}
    for line in text.splitlines():
        key, sep, value = line.partition(" = ")
        if not sep:
            raise CheckpointError(f"malformed metadata line {line!r}")
        metadata[key] = value
    try:
        n_tensors = int(metadata.pop("tensors"))
    except (KeyError, ValueError):
        raise CheckpointError("metadata lacks a tensor count") from None

    tensors: dict[str, np.ndarray] = {}
    for index in range(n_tensors):
        start = r.pos
        (name_len,) = struct.unpack("<I", r.take(4, f"name length of record {index}"))
        raw_name = r.take(name_len, f"name of record {index}")
        name = raw_name.decode("utf-8", errors="replace")
        (rank,) = struct.unpack("<B", r.take(1, f"rank of {name!r}"))
        dims = struct.unpack(f"<{rank}Q", r.take(8 * rank, f"dims of {name!r}"))
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = r.take(4 * count, f"payload of {name!r}")
        record = data[start:r.pos]
        (stored,) = struct.unpack("<Q", r.take(8, f"checksum of {name!r}"))
        if stored != _crc(record):
            raise CheckpointError(f"checksum mismatch in tensor {name!r}")
        if name in tensors:
            raise CheckpointError(f"duplicate tensor {name!r}")
        if expected_shapes is not None:
            if name not in expected_shapes:
                raise CheckpointError(f"unknown tensor name {name!r}")
            if tuple(dims) != tuple(expected_shapes[name]):
                raise CheckpointError(f"dimension mismatch for tensor {name!r}: file {tuple(dims)}, "
                                      f"expected {tuple(expected_shapes[name])}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float64)
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after the last tensor record")
    if expected_shapes is not None:
        missing = [n for n in expected_shapes if n not in tensors]
        if missing:
            raise CheckpointError(f"checkpoint lacks tensor {missing[0]!r}")
    return Checkpoint(metadata, tensors, version)


def load_checkpoint(path: str | os.PathLike, expected_shapes: dict[str, tuple[int, ...]] | None = None) -> Checkpoint:
    with open(path, "rb") as fh:
        return from_bytes(fh.read(), expected_shapes)


# --------------------------------------------------------------------------
# rng state as metadata
# --------------------------------------------------------------------------


def rng_to_metadata(prefix: str, rng: np.random.Generator) -> dict[str, str]:
    st = rng.bit_generator.state
    if st["bit_generator"] != "PCG64":
        raise CheckpointError(f"unsupported bit generator {st['bit_generator']}")
    return {
        f"{prefix}.bit_generator": "PCG64",
        f"{prefix}.state": str(st["state"]["state"]),
        f"{prefix}.inc": str(st["state"]["inc"]),
        f"{prefix}.has_uint32": str(st["has_uint32"]),
        f"{prefix}.uinteger": str(st["uinteger"]),
    }


def rng_from_metadata(prefix: str, metadata: dict[str, str]) -> np.random.Generator:
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": int(metadata[f"{prefix}.state"]), "inc": int(metadata[f"{prefix}.inc"])},
        "has_uint32": int(metadata[f"{prefix}.has_uint32"]),
        "uinteger": int(metadata[f"{prefix}.uinteger"]),
    }
    return rng
