"""Self-describing binary checkpoint format.

Layout (all integers little-endian)::

    b"MFCK"                       magic
    u32  version                  currently 1
    u32  n, n bytes               graph fingerprint (SHA-256 of canonical graph)
    u32  count                    metadata entries, each: str key, str value
    u32  count                    tensor records, each:
             str   name
             u8    precision      1 = float32, 2 = float64
             u32   ndim
             u64 * ndim            shape
             u64   nbytes          == prod(shape) * itemsize
             bytes payload        little-endian, C order
    u32  crc32 of every preceding byte

``str`` is a u32 byte length followed by UTF-8 bytes.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, CheckpointVersionError, StructuralError
from .graph import GraphSpec, ParamStore

MAGIC = b"MFCK"
FORMAT_VERSION = 1
_PRECISION = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODE = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


@dataclass
class Checkpoint:
    fingerprint: bytes
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)
    version: int = FORMAT_VERSION


def _str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def encode(ckpt: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<I", ckpt.version), struct.pack("<I", len(ckpt.fingerprint)),
             ckpt.fingerprint, struct.pack("<I", len(ckpt.metadata))]
    for k, v in ckpt.metadata.items():
        parts += [_str(str(k)), _str(str(v))]
    parts.append(struct.pack("<I", len(ckpt.tensors)))
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _CODE:
            raise CheckpointError(f"tensor {name!r} has unsupported precision {arr.dtype}")
        payload = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()
        parts += [_str(name), struct.pack("<BI", _CODE[arr.dtype], arr.ndim),
                  struct.pack(f"<{arr.ndim}Q", *arr.shape), struct.pack("<Q", len(payload)),
                  payload]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise CheckpointError(f"checkpoint truncated while reading {what} "
                                  f"(offset {self.pos}, need {n} bytes, have "
                                  f"{len(self.data) - self.pos})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def string(self, what: str) -> str:
        (n,) = self.unpack("<I", what)
        try:
            return self.take(n, what).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError(f"corrupt {what}: {e}") from None


def decode(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("not an MFCK checkpoint (bad magic bytes)")
    (version,) = r.unpack("<I", "version")
    if version > FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format version {version} is newer than supported version "
            f"{FORMAT_VERSION}")
    if version < 1:
        raise CheckpointError(f"invalid checkpoint version {version}")
    if len(data) < 8 or zlib.crc32(data[:-4]) != struct.unpack("<I", data[-4:])[0]:
        # distinguish truncation from bit rot for a clearer message
        _scan(r)
        raise CheckpointError("checkpoint checksum mismatch (file corrupted)")
    return _scan(r, version)


def _scan(r: _Reader, version: int = FORMAT_VERSION) -> Checkpoint:
    (n,) = r.unpack("<I", "fingerprint length")
    fingerprint = r.take(n, "fingerprint")
    (count,) = r.unpack("<I", "metadata count")
    metadata = {}
    for _ in range(count):
        k = r.string("metadata key")
        metadata[k] = r.string("metadata value")
    (count,) = r.unpack("<I", "tensor count")
    tensors = {}
    for _ in range(count):
        name = r.string("tensor name")
        code, ndim = r.unpack("<BI", f"header of tensor {name!r}")
        if code not in _PRECISION:
            raise CheckpointError(f"tensor {name!r}: unknown precision code {code}")
        if ndim > 16:
            raise CheckpointError(f"tensor {name!r}: implausible rank {ndim}")
        shape = r.unpack(f"<{ndim}Q", f"shape of tensor {name!r}")
        (nbytes,) = r.unpack("<Q", f"size of tensor {name!r}")
        dtype = _PRECISION[code]
        if nbytes != int(np.prod(shape, dtype=np.uint64)) * dtype.itemsize:
            raise CheckpointError(f"tensor {name!r}: payload length {nbytes} does not match "
                                  f"shape {shape}")
        payload = r.take(nbytes, f"payload of tensor {name!r}")
        tensors[name] = np.frombuffer(payload, dtype=dtype).astype(dtype.newbyteorder("="))\
            .reshape(shape)
    r.take(4, "checksum")
    if r.pos != len(r.data):
        raise CheckpointError(f"{len(r.data) - r.pos} trailing bytes after checkpoint")
    return Checkpoint(fingerprint, tensors, metadata, version)


def write_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(encode(ckpt))


def read_checkpoint(path) -> Checkpoint:
    return decode(Path(path).read_bytes())


def checkpoint_from_store(store: ParamStore, graph: GraphSpec,
                          metadata: dict[str, str] | None = None) -> Checkpoint:
    store.validate(graph)
    tensors = {k: store.params[k] for k in graph.param_shapes}
    tensors.update({k: store.buffers[k] for k in graph.buffer_shapes})
    meta = {"graph": graph.name}
    meta.update(metadata or {})
    return Checkpoint(graph.fingerprint(), tensors, meta)


def store_from_checkpoint(ckpt: Checkpoint, graph: GraphSpec, force: bool = False) -> ParamStore:
    expected = set(graph.param_shapes) | set(graph.buffer_shapes)
    missing = [k for k in list(graph.param_shapes) + list(graph.buffer_shapes)
               if k not in ckpt.tensors]
    extra = [k for k in ckpt.tensors if k not in expected]
    if ckpt.fingerprint != graph.fingerprint() and not force:
        detail = ""
        if missing:
            detail = f"; missing parameter {missing[0]!r}"
        elif extra:
            detail = f"; unexpected parameter {extra[0]!r}"
        raise StructuralError(f"checkpoint fingerprint does not match graph {graph.name!r}"
                              f"{detail}")
    if missing:
        raise StructuralError(f"checkpoint lacks parameter {missing[0]!r} of graph {graph.name!r}")
    if extra:
        raise StructuralError(f"checkpoint has parameter {extra[0]!r} unknown to graph "
                              f"{graph.name!r}")
    store = ParamStore({k: ckpt.tensors[k].copy() for k in graph.param_shapes},
                       {k: ckpt.tensors[k].copy() for k in graph.buffer_shapes})
    store.validate(graph)
    store.zero_grad()
    return store


def save_checkpoint(store: ParamStore, graph: GraphSpec, path,
                    metadata: dict[str, str] | None = None) -> None:
    write_checkpoint(checkpoint_from_store(store, graph, metadata), path)


def load_checkpoint(path, graph: GraphSpec, force: bool = False) -> ParamStore:
    return store_from_checkpoint(read_checkpoint(path), graph, force)
