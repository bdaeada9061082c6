"""Framed binary checkpoints.

Layout (all integers little-endian)::

    b"SPKMOECK"  u32 version
    u32 n + n bytes   config JSON (sorted keys)
    u32 n + n bytes   metrics JSON (sorted keys)
    tensor block      parameters and buffers
    u8 has_optim      [u64 step, tensor block of "m/<name>" and "v/<name>"]
    u32 crc32 of every preceding byte

A tensor block is ``u32 count`` followed by, per tensor, ``u16 name_len,
name, u8 ndim, u32 dims..., float32 data``. The whole file is parsed before
anything is returned, so a corrupt file never yields a partial checkpoint.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"SPKMOECK"
VERSION = 1


@dataclass
class Checkpoint:
    config: dict
    params: dict[str, np.ndarray]
    metrics: dict = field(default_factory=dict)
    optimizer: dict | None = None  # {"step": int, "m": {...}, "v": {...}}

    def to_bytes(self) -> bytes:
        out = bytearray(MAGIC)
        out += struct.pack("<I", VERSION)
        for blob in (_json(self.config), _json(self.metrics)):
            out += struct.pack("<I", len(blob)) + blob
        out += _tensor_block(self.params)
        if self.optimizer is None:
            out += b"\x00"
        else:
            out += b"\x01" + struct.pack("<Q", int(self.optimizer["step"]))
            moments = {f"m/{k}": v for k, v in self.optimizer["m"].items()}
            moments.update({f"v/{k}": v for k, v in self.optimizer["v"].items()})
            out += _tensor_block(moments)
        out += struct.pack("<I", zlib.crc32(bytes(out)))
        return bytes(out)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        r = _Reader(raw)
        if r.take(len(MAGIC)) != MAGIC:
            raise FormatError("bad magic: not a spikingmoe checkpoint")
        (version,) = r.unpack("<I")
        if version != VERSION:
            raise FormatError(f"checkpoint version {version} unsupported (expected {VERSION})")
        if len(raw) < 4 or zlib.crc32(raw[:-4]) != struct.unpack("<I", raw[-4:])[0]:
            raise FormatError("checksum mismatch: checkpoint is corrupted")
        config = r.json()
        metrics = r.json()
        params = r.tensors()
        (has_optim,) = r.unpack("<B")
        optimizer = None
        if has_optim:
            (step,) = r.unpack("<Q")
            moments = r.tensors()
            optimizer = {
                "step": step,
                "m": {k[2:]: v for k, v in moments.items() if k.startswith("m/")},
                "v": {k[2:]: v for k, v in moments.items() if k.startswith("v/")},
            }
        if r.pos != len(raw) - 4:
            raise FormatError(f"trailing bytes at offset {r.pos}")
        return cls(config, params, metrics, optimizer)


def _json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def _tensor_block(tensors: dict[str, np.ndarray]) -> bytes:
    out = bytearray(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        enc = name.encode()
        out += struct.pack("<H", len(enc)) + enc
        out += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    return bytes(out)


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise FormatError(f"truncated checkpoint at offset {self.pos}")
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def json(self):
        (n,) = self.unpack("<I")
        try:
            return json.loads(self.take(n))
        except ValueError as exc:
            raise FormatError(f"malformed JSON block before offset {self.pos}") from exc

    def tensors(self) -> dict[str, np.ndarray]:
        (count,) = self.unpack("<I")
        out = {}
        for _ in range(count):
            (n,) = self.unpack("<H")
            name = self.take(n).decode()
            (ndim,) = self.unpack("<B")
            shape = self.unpack(f"<{ndim}I")
            size = int(np.prod(shape, dtype=np.int64))
            out[name] = np.frombuffer(self.take(4 * size), dtype="<f4").reshape(shape).copy()
        return out


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def model_checkpoint(model, metrics: dict | None = None, optimizer=None) -> Checkpoint:
    return Checkpoint(
        config=model.cfg.to_dict(),
        params={k: np.asarray(v, dtype=np.float32) for k, v in model.state_dict().items()},
        metrics=metrics or {},
        optimizer=optimizer.state_dict() if optimizer is not None else None,
    )


def save_checkpoint(path, model, metrics: dict | None = None, optimizer=None) -> Checkpoint:
    ckpt = model_checkpoint(model, metrics, optimizer)
    atomic_write(path, ckpt.to_bytes())
    return ckpt


def load_checkpoint(path) -> Checkpoint:
    return Checkpoint.from_bytes(Path(path).read_bytes())


def restore_model(ckpt: Checkpoint, cfg=None):
    """Build a model from ``cfg`` (default: the checkpoint's own config) and load the weights."""
    from .model import ModelConfig, SpikingMoE

    cfg = cfg or ModelConfig.from_dict(ckpt.config)
    model = SpikingMoE(cfg)
    model.load_state(ckpt.params)
    return model
