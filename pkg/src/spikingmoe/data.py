"""Datasets: the CIFAR-10 binary layout, synthetic stand-ins, and a portable array container."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import atomic_write
from .errors import ContractError, FormatError

CIFAR_RECORD = 3073
CIFAR_SHAPE = (3, 32, 32)
KINDS = ("cifar10-binary", "synthetic-static", "synthetic-events")


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "synthetic-static"
    path: str | None = None
    val_fraction: float = 0.0
    mean: tuple[float, ...] | None = None
    std: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown dataset kind {self.kind!r}; choose from {KINDS}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ContractError("val_fraction must lie in [0, 1)")


@dataclass
class Dataset:
    x: np.ndarray  # (S, C, H, W) images in [0, 1] or (S, T, C, H, W) event frames
    y: np.ndarray  # (S,) int64 labels
    kind: str = "synthetic-static"
    num_classes: int = 10

    def __len__(self) -> int:
        return len(self.y)

    @property
    def is_events(self) -> bool:
        return self.kind == "synthetic-events"

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.x[idx], self.y[idx], self.kind, self.num_classes)

    def split(self, val_fraction: float, seed: int = 0) -> tuple["Dataset", "Dataset | None"]:
        if val_fraction <= 0:
            return self, None
        order = np.random.default_rng(seed).permutation(len(self))
        n_val = max(1, int(round(val_fraction * len(self))))
        return self.subset(np.sort(order[n_val:])), self.subset(np.sort(order[:n_val]))

    def batch_inputs(self, idx) -> np.ndarray:
        """Model-ready inputs: events are returned time-major (T, B, C, H, W)."""
        x = self.x[idx].astype(np.float32)
        return np.ascontiguousarray(x.transpose(1, 0, 2, 3, 4)) if self.is_events else x


# -- CIFAR-10 binary -----------------------------------------------------------
def _cifar_files(path: Path, split: str) -> list[Path]:
    if path.is_file():
        return [path]
    names = [f"data_batch_{i}.bin" for i in range(1, 6)] if split == "train" else ["test_batch.bin"]
    files = [path / n for n in names if (path / n).exists()]
    if not files:
        raise FileNotFoundError(f"no CIFAR-10 {split} batches under {path}")
    return files


def load_cifar10(path, spec: DatasetSpec | None = None, split: str = "train", limit: int | None = None) -> Dataset:
    """Read the standard CIFAR-10 binary layout: records of 1 label byte + 3072 pixel bytes."""
    xs, ys = [], []
    for f in _cifar_files(Path(path), split):
        raw = f.read_bytes()
        if len(raw) % CIFAR_RECORD:
            bad = (len(raw) // CIFAR_RECORD) * CIFAR_RECORD
            raise FormatError(f"{f}: truncated record at byte offset {bad} (file is {len(raw)} bytes)")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        labels = rec[:, 0]
        if labels.max(initial=0) > 9:
            row = int(np.argmax(labels > 9))
            raise FormatError(f"{f}: label {labels[row]} out of range at byte offset {row * CIFAR_RECORD}")
        ys.append(labels.astype(np.int64))
        xs.append(rec[:, 1:].reshape(-1, *CIFAR_SHAPE))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    if limit is not None:
        x, y = x[:limit], y[:limit]
    x = x.astype(np.float32) / 255.0
    if spec is not None and spec.mean is not None:
        mean = np.asarray(spec.mean, dtype=np.float32).reshape(1, -1, 1, 1)
        std = np.asarray(spec.std or (1.0,) * len(spec.mean), dtype=np.float32).reshape(1, -1, 1, 1)
        x = (x - mean) / std
    return Dataset(x, y, "cifar10-binary", 10)


# -- synthetic -----------------------------------------------------------------
def _class_anchors(num_classes: int, rng: np.random.Generator):
    rows = np.linspace(0.2, 0.8, num_classes)
    colors = rng.random((num_classes, 3)) * 0.8 + 0.2
    colors[np.arange(num_classes), np.arange(num_classes) % 3] = 1.0
    return rows, colors


def gen_synthetic(kind: str, seed: int, count: int, num_classes: int = 2, image_size: int = 32,
                  timesteps: int = 4) -> Dataset:
    """Seeded, class-separable stand-in data.

    ``synthetic-static``: one Gaussian blob per image whose vertical position
    and colour depend on the class; the horizontal position is random, so
    horizontal flips preserve the class. ``synthetic-events``: binary ON/OFF
    frames (S, T, 2, H, W) of a dot moving in a class-specific direction.
    """
    if count <= 0:
        raise ContractError("count must be positive")
    rng = np.random.default_rng(seed)
    y = np.arange(count, dtype=np.int64) % num_classes
    rng.shuffle(y)
    if kind == "synthetic-static":
        return Dataset(_blobs(y, num_classes, image_size, rng), y, kind, num_classes)
    if kind == "synthetic-events":
        return Dataset(_moving_dots(y, num_classes, image_size, timesteps, rng), y, kind, num_classes)
    raise ContractError(f"unknown synthetic kind {kind!r}")


def _blobs(y, num_classes, size, rng) -> np.ndarray:
    rows, colors = _class_anchors(num_classes, np.random.default_rng(1234))
    grid = (np.arange(size) + 0.5) / size
    out = np.empty((len(y), 3, size, size), dtype=np.float32)
    for i, c in enumerate(y):
        cy = rows[c] + rng.normal(0, 0.03)
        cx = rng.uniform(0.2, 0.8)
        sigma = rng.uniform(0.08, 0.12)
        blob = np.exp(-((grid[:, None] - cy) ** 2 + (grid[None, :] - cx) ** 2) / (2 * sigma**2))
        img = colors[c][:, None, None] * blob[None] + rng.normal(0, 0.05, (3, size, size))
        out[i] = np.clip(img, 0.0, 1.0)
    return out


def _moving_dots(y, num_classes, size, timesteps, rng) -> np.ndarray:
    angles = 2 * np.pi * np.arange(num_classes) / num_classes
    out = np.zeros((len(y), timesteps, 2, size, size), dtype=np.float32)
    speed = size / (2.0 * timesteps)
    radius = max(1, size // 16)
    yy, xx = np.mgrid[0:size, 0:size]
    for i, c in enumerate(y):
        start = np.array([size / 2, size / 2]) + rng.uniform(-size / 8, size / 8, 2)
        vel = speed * np.array([np.sin(angles[c]), np.cos(angles[c])])
        prev = None
        for t in range(timesteps + 1):
            cy, cx = start + vel * (t - timesteps / 2)
            cur = ((yy - cy) ** 2 + (xx - cx) ** 2) <= radius**2
            if prev is not None:
                out[i, t - 1, 0] = cur & ~prev  # ON: pixel became bright
                out[i, t - 1, 1] = prev & ~cur  # OFF: pixel went dark
            prev = cur
        flip = rng.random((timesteps, 2, size, size)) < 0.002
        out[i] = np.logical_xor(out[i] > 0, flip)
    return out


def augment(x: np.ndarray, rng: np.random.Generator, events: bool = False, pad: int = 4) -> np.ndarray:
    """Random horizontal flip, plus 4-pixel pad-and-crop for static images."""
    x = x.copy()
    flip = rng.random(x.shape[0]) < 0.5
    x[flip] = x[flip][..., ::-1]
    if events or pad == 0:
        return x
    b, c, h, w = x.shape
    padded = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    padded[:, :, pad : pad + h, pad : pad + w] = x
    offs = rng.integers(0, 2 * pad + 1, size=(b, 2))
    for i, (dy, dx) in enumerate(offs):
        x[i] = padded[i, :, dy : dy + h, dx : dx + w]
    return x


# -- array container -----------------------------------------------------------
ARRAY_MAGIC = b"SPKARRAY"
ARRAY_VERSION = 1


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Self-describing container: magic, version, JSON header, then little-endian payloads."""
    header = {"meta": meta or {}, "arrays": []}
    payload = bytearray()
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        dtype = arr.dtype.newbyteorder("<")
        header["arrays"].append({"name": name, "dtype": dtype.str, "shape": list(arr.shape)})
        payload += np.ascontiguousarray(arr, dtype=dtype).tobytes()
    head = json.dumps(header, sort_keys=True).encode()
    atomic_write(path, ARRAY_MAGIC + struct.pack("<II", ARRAY_VERSION, len(head)) + head + bytes(payload))


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[: len(ARRAY_MAGIC)] != ARRAY_MAGIC:
        raise FormatError(f"{path}: bad magic, not a spikingmoe array file")
    if len(raw) < len(ARRAY_MAGIC) + 8:
        raise FormatError(f"{path}: truncated header")
    version, n = struct.unpack_from("<II", raw, len(ARRAY_MAGIC))
    if version != ARRAY_VERSION:
        raise FormatError(f"{path}: array file version {version} unsupported")
    pos = len(ARRAY_MAGIC) + 8
    header = json.loads(raw[pos : pos + n])
    pos += n
    out = {}
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        size = int(np.prod(entry["shape"], dtype=np.int64)) * dtype.itemsize
        if pos + size > len(raw):
            raise FormatError(f"{path}: array {entry['name']!r} truncated at byte offset {pos}")
        out[entry["name"]] = np.frombuffer(raw[pos : pos + size], dtype=dtype).reshape(entry["shape"]).copy()
        pos += size
    return out, header["meta"]


def save_dataset(path, ds: Dataset) -> None:
    x = ds.x.astype(np.uint8) if ds.is_events else ds.x.astype(np.float32)
    save_arrays(path, {"x": x, "y": ds.y.astype(np.int64)}, {"kind": ds.kind, "num_classes": ds.num_classes})


def load_dataset(path) -> Dataset:
    arrays, meta = load_arrays(path)
    return Dataset(arrays["x"].astype(np.float32), arrays["y"], meta["kind"], int(meta["num_classes"]))


def load(spec: DatasetSpec, split: str = "train", seed: int = 0, count: int = 256, num_classes: int = 2,
         image_size: int = 32, timesteps: int = 4, limit: int | None = None) -> Dataset:
    """Resolve a :class:`DatasetSpec` to data: read files when a path is given, else generate."""
    if spec.kind == "cifar10-binary":
        if spec.path is None:
            raise ContractError("cifar10-binary needs a data path")
        return load_cifar10(spec.path, spec, split, limit)
    if spec.path is not None:
        ds = load_dataset(spec.path)
        if ds.kind != spec.kind:
            raise FormatError(f"{spec.path} holds {ds.kind} data, expected {spec.kind}")
        return ds if limit is None else ds.subset(np.arange(min(limit, len(ds))))
    # distinct seeds per split so train and test never share samples
    offset = 0 if split == "train" else 1_000_003
    return gen_synthetic(spec.kind, seed + offset, count, num_classes, image_size, timesteps)
