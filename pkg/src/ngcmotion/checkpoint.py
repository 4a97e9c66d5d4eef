"""Binary model checkpoints.

Layout (all integers little-endian):

    magic  b"NGCM"
    u32    format version (currently 1)
    u64    config length, then that many bytes of canonical JSON (sorted keys)
    u32    record count, then per record:
               u16 name length, utf-8 name,
               u8 rank, u32 per dimension,
               float64 data, little-endian, row-major
    32B    sha256 of everything above

Records are written sorted by name, so identical state always produces an
identical file.  Parameters, batchnorm running buffers and Adam moments all
live in the record section under distinct name prefixes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"NGCM"
VERSION = 1

_BUFFER_PREFIX = "buffer:"
_ADAM_M_PREFIX = "adam.m:"
_ADAM_V_PREFIX = "adam.v:"


class CheckpointError(ValueError):
    pass


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: dict  # {"model": ..., "train": ..., "epoch": ..., ...}
    records: dict  # name -> float64 ndarray

    @property
    def epoch(self):
        return int(self.config.get("epoch", 0))


def _encode_records(records):
    chunks = []
    for name in sorted(records):
        arr = np.ascontiguousarray(records[name], dtype=np.float64)
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            chunks.append(struct.pack("<I", dim))
        chunks.append(arr.astype("<f8").tobytes())
    return b"".join(chunks)


def write_checkpoint(path, config, records):
    body = bytearray()
    body += MAGIC
    body += struct.pack("<I", VERSION)
    cfg = json.dumps(config, sort_keys=True).encode("utf-8")
    body += struct.pack("<Q", len(cfg))
    body += cfg
    body += struct.pack("<I", len(records))
    body += _encode_records(records)
    digest = hashlib.sha256(bytes(body)).digest()
    with open(path, "wb") as fh:
        fh.write(bytes(body) + digest)


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.blob):
            raise CheckpointTruncatedError(f"checkpoint truncated while reading {what}")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u(self, fmt, what):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))[0]


def read_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 4 + 8 + 4 + 32:
        raise CheckpointTruncatedError("file too short to be a checkpoint")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointChecksumError("checksum mismatch: file corrupted")
    r = _Reader(body)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u("<I", "version")
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported format version {version}, expected {VERSION}")
    cfg_len = r.u("<Q", "config length")
    try:
        config = json.loads(r.take(cfg_len, "config").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"invalid config block: {e}") from None
    count = r.u("<I", "record count")
    records = {}
    for _ in range(count):
        name_len = r.u("<H", "record name length")
        name = r.take(name_len, "record name").decode("utf-8")
        rank = r.u("<B", "record rank")
        shape = tuple(r.u("<I", "record dimension") for _ in range(rank))
        n_items = int(np.prod(shape)) if shape else 1
        raw = r.take(8 * n_items, f"record {name} data")
        records[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(body):
        raise CheckpointError(f"{len(body) - r.pos} trailing bytes after records")
    return Checkpoint(config=config, records=records)


# ---------------------------------------------------------------------------
# model <-> record mapping


def model_records(model, adam_state=None):
    records = {}
    for name, p in model.named_parameters():
        records[name] = p.data
    for name, buf in model.named_buffers():
        records[_BUFFER_PREFIX + name] = buf
    if adam_state is not None:
        for key, m in adam_state.m.items():
            records[_ADAM_M_PREFIX + key] = m
        for key, v in adam_state.v.items():
            records[_ADAM_V_PREFIX + key] = v
    return records


def restore_model(model, checkpoint):
    """Copy parameter and buffer records into an existing model in place."""
    params = dict(model.named_parameters())
    for name, p in params.items():
        if name not in checkpoint.records:
            raise CheckpointError(f"checkpoint is missing parameter {name!r}")
        arr = checkpoint.records[name]
        if arr.shape != p.data.shape:
            raise CheckpointError(
                f"parameter {name!r} has shape {arr.shape}, model expects {p.data.shape}"
            )
        p.data = arr.copy()
        p.grad = np.zeros_like(p.data)
    for name, buf in model.named_buffers():
        key = _BUFFER_PREFIX + name
        if key not in checkpoint.records:
            raise CheckpointError(f"checkpoint is missing buffer {name!r}")
        arr = checkpoint.records[key]
        if arr.shape != buf.shape:
            raise CheckpointError(f"buffer {name!r} shape mismatch")
        buf[...] = arr


def restore_adam(adam_state, checkpoint):
    for name, arr in checkpoint.records.items():
        if name.startswith(_ADAM_M_PREFIX):
            adam_state.m[name[len(_ADAM_M_PREFIX):]] = arr.copy()
        elif name.startswith(_ADAM_V_PREFIX):
            adam_state.v[name[len(_ADAM_V_PREFIX):]] = arr.copy()
