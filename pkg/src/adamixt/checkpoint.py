"""Binary checkpoint serialization.

Layout (all integers little-endian unsigned 64-bit unless noted):

    magic "ADMX" | version u8 | meta_len u64 | meta JSON (config echo, epoch,
    best val metric) | tensor_count u64 | tensor records | step_count u64 |
    moment_count u64 | moment records ("m:" / "v:" prefixed names) |
    rng_len u64 | rng JSON | crc u32

A tensor record is: name_len u64, name UTF-8, ndim u64, dims u64 x ndim,
values as little-endian float64. The trailing CRC-32 covers every byte
before it; nothing is constructed from a file whose CRC fails, so a corrupt
file can never yield partial state. Meta and RNG JSON use sorted keys and
compact separators, making save -> load -> save byte-identical.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (CheckpointError, CheckpointFormatError,
                     CheckpointShapeError, CheckpointTruncatedError,
                     CheckpointVersionError)

MAGIC = b"ADMX"
VERSION = 1


@dataclass
class Checkpoint:
    """Everything needed to restore a trained model and its optimizer."""

    config: dict[str, str]
    tensors: dict[str, np.ndarray]
    opt_m: dict[str, np.ndarray] = field(default_factory=dict)
    opt_v: dict[str, np.ndarray] = field(default_factory=dict)
    step_count: int = 0
    rng_state: dict = field(default_factory=dict)
    epoch: int = 0
    best_val: float | None = None
    version: int = VERSION


def _pack_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _pack_tensor(name: str, values: np.ndarray) -> bytes:
    encoded = name.encode("utf-8")
    arr = np.ascontiguousarray(values, dtype="<f8")
    parts = [struct.pack("<Q", len(encoded)), encoded,
             struct.pack("<Q", arr.ndim)]
    parts += [struct.pack("<Q", d) for d in arr.shape]
    parts.append(arr.tobytes())
    return b"".join(parts)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    meta = _pack_json({
        "config": ckpt.config,
        "epoch": ckpt.epoch,
        "best_val": ckpt.best_val if ckpt.best_val is not None and np.isfinite(ckpt.best_val) else None,
    })
    parts = [MAGIC, struct.pack("<B", VERSION), struct.pack("<Q", len(meta)), meta]
    parts.append(struct.pack("<Q", len(ckpt.tensors)))
    for name, values in ckpt.tensors.items():
        parts.append(_pack_tensor(name, values))
    parts.append(struct.pack("<Q", ckpt.step_count))
    moments = [("m:" + n, v) for n, v in ckpt.opt_m.items()]
    moments += [("v:" + n, v) for n, v in ckpt.opt_v.items()]
    parts.append(struct.pack("<Q", len(moments)))
    for name, values in moments:
        parts.append(_pack_tensor(name, values))
    rng = _pack_json(ckpt.rng_state)
    parts.append(struct.pack("<Q", len(rng)))
    parts.append(rng)
    body = b"".join(parts)
    blob = body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    Path(path).write_bytes(blob)


class _Cursor:
    """Sequential reader that raises a truncation error on overrun."""

    def __init__(self, buf: bytes, limit: int):
        self.buf = buf
        self.pos = 0
        self.limit = limit

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > self.limit:
            raise CheckpointTruncatedError(
                f"checkpoint ends at byte {self.limit} but {n} more bytes were "
                f"declared at offset {self.pos}"
            )
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]


def _read_tensor(cur: _Cursor) -> tuple[str, np.ndarray]:
    name = cur.take(cur.u64()).decode("utf-8")
    ndim = cur.u64()
    if ndim > 16:
        raise CheckpointFormatError(f"tensor {name!r} declares {ndim} dimensions")
    dims = tuple(cur.u64() for _ in range(ndim))
    count = 1
    for d in dims:
        count *= d
    raw = cur.take(8 * count)
    values = np.frombuffer(raw, dtype="<f8").reshape(dims).copy()
    return name, values


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Parse and CRC-verify a checkpoint file; raises before returning any state."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint file {path}: {exc}") from None
    if len(blob) < len(MAGIC) + 1 + 4:
        raise CheckpointTruncatedError(
            f"checkpoint file is only {len(blob)} bytes"
        )
    if blob[:4] != MAGIC:
        raise CheckpointFormatError(
            f"bad magic bytes {blob[:4]!r}; not a checkpoint file"
        )
    version = blob[4]
    if version != VERSION:
        raise CheckpointVersionError(
            f"checkpoint format version {version} not supported (expected {VERSION})"
        )
    cur = _Cursor(blob, len(blob) - 4)
    cur.pos = 5
    try:
        meta = json.loads(cur.take(cur.u64()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"unreadable checkpoint metadata: {exc}") from None
    tensors = dict(_read_tensor(cur) for _ in range(cur.u64()))
    step_count = cur.u64()
    opt_m: dict[str, np.ndarray] = {}
    opt_v: dict[str, np.ndarray] = {}
    for _ in range(cur.u64()):
        name, values = _read_tensor(cur)
        if name.startswith("m:"):
            opt_m[name[2:]] = values
        elif name.startswith("v:"):
            opt_v[name[2:]] = values
        else:
            raise CheckpointFormatError(f"unexpected optimizer record {name!r}")
    try:
        rng_state = json.loads(cur.take(cur.u64()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"unreadable RNG state: {exc}") from None
    if cur.pos != cur.limit:
        raise CheckpointFormatError(
            f"{cur.limit - cur.pos} trailing bytes after checkpoint contents"
        )
    declared = struct.unpack("<I", blob[-4:])[0]
    actual = zlib.crc32(blob[:-4]) & 0xFFFFFFFF
    if declared != actual:
        raise CheckpointFormatError(
            f"checksum mismatch: file says {declared:#010x}, contents give {actual:#010x}"
        )
    return Checkpoint(
        config=meta.get("config", {}),
        tensors=tensors,
        opt_m=opt_m,
        opt_v=opt_v,
        step_count=step_count,
        rng_state=rng_state,
        epoch=int(meta.get("epoch", 0)),
        best_val=meta.get("best_val"),
        version=version,
    )


def restore_tensors(ckpt: Checkpoint, params: dict) -> None:
    """Copy checkpoint values into an existing parameter dict, shape-checked."""
    missing = set(params) - set(ckpt.tensors)
    extra = set(ckpt.tensors) - set(params)
    if missing or extra:
        raise CheckpointShapeError(
            f"checkpoint tensors do not match the model: missing {sorted(missing)}, "
            f"unexpected {sorted(extra)}"
        )
    for name, tensor in params.items():
        stored = ckpt.tensors[name]
        if stored.shape != tensor.data.shape:
            raise CheckpointShapeError(
                f"tensor {name!r} has shape {stored.shape} in the checkpoint but "
                f"{tensor.data.shape} in the model"
            )
        tensor.data = stored.astype(tensor.data.dtype)
