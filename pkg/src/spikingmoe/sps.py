"""Spiking patch splitting: images or event frames to spike-form patch tokens."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractError, DimensionError
from .neurons import LifParams, lif_sequence
from .nn import Module, Parameter, init_weight, zeros
from .tensor import SpikeTensor, Tensor, get_default_dtype


@dataclass(frozen=True)
class PatchConfig:
    image_size: int = 32
    patch_size: int = 4
    in_channels: int = 3
    embed_dim: int = 256
    timesteps: int = 4

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ContractError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_tokens(self) -> int:
        return self.grid**2

    @property
    def patch_dim(self) -> int:
        return self.in_channels * self.patch_size**2

    def to_dict(self) -> dict:
        return asdict(self)


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """(..., C, H, W) -> (..., N, C*patch*patch) with row-major patch order."""
    *lead, c, h, w = images.shape
    gh, gw = h // patch, w // patch
    x = images.reshape(*lead, c, gh, patch, gw, patch)
    k = len(lead)
    order = (*range(k), k + 1, k + 3, k, k + 2, k + 4)
    return x.transpose(order).reshape(*lead, gh * gw, c * patch * patch)


class BatchNorm(Module):
    """Per-channel normalization over every axis but the last."""

    _buffers = ("running_mean", "running_var")

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(dim))
        self.beta = zeros(dim)
        dtype = get_default_dtype()
        self.running_mean = np.zeros(dim, dtype=dtype)
        self.running_var = np.ones(dim, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        axes = tuple(range(x.ndim - 1))
        if self.training:
            mean = x.mean(axis=axes, keepdims=True)
            centred = x - mean
            var = (centred * centred).mean(axis=axes, keepdims=True)
            m = self.momentum
            self.running_mean = ((1 - m) * self.running_mean + m * mean.data.reshape(-1)).astype(self.running_mean.dtype)
            self.running_var = ((1 - m) * self.running_var + m * var.data.reshape(-1)).astype(self.running_var.dtype)
            normed = centred / (var + self.eps) ** 0.5
        else:
            normed = (x - self.running_mean) / np.sqrt(self.running_var + self.eps)
        return normed * self.gamma + self.beta


class SpikingPatchSplit(Module):
    """Stride-``patch_size`` convolution, batch normalization, then LIF."""

    def __init__(self, cfg: PatchConfig, rng: np.random.Generator, lif: LifParams | None = None, gain: float = 1.0):
        self.cfg = cfg
        self.weight = init_weight(rng, cfg.patch_dim, cfg.embed_dim, gain)
        self.bias = zeros(cfg.embed_dim)
        self.bn = BatchNorm(cfg.embed_dim)
        self.lif = lif or LifParams()
        self.name = "sps"

    def project(self, patches: Tensor) -> Tensor:
        """Pre-LIF patch embedding (conv as a patch matmul, then normalization)."""
        return self.bn(patches @ self.weight + self.bias)

    def encode_static(self, image, ledger=None) -> SpikeTensor:
        """Direct coding: the analog image drives the first LIF identically at every step."""
        cfg = self.cfg
        img = image.data if isinstance(image, Tensor) else np.asarray(image)
        if img.ndim != 4 or img.shape[1:] != (cfg.in_channels, cfg.image_size, cfg.image_size):
            raise DimensionError(
                f"expected images (B, {cfg.in_channels}, {cfg.image_size}, {cfg.image_size}), got {img.shape}"
            )
        patches = Tensor(patchify(img.astype(self.weight.dtype, copy=False), cfg.patch_size))
        x = self.project(patches)
        b, n, d = x.shape
        x = x.reshape(1, b, n, d).expand((cfg.timesteps, b, n, d))
        if ledger is not None:
            ledger.analog_synapses(self.name, cfg.timesteps, b * n, cfg.patch_dim, d)
            ledger.neuron_updates(self.name, x.shape)
        return lif_sequence(x, self.lif)

    def encode_events(self, frames, ledger=None) -> SpikeTensor:
        """Event frames (T, B, C, H, W) already carry time; each step is projected separately."""
        cfg = self.cfg
        fr = frames.data if isinstance(frames, Tensor) else np.asarray(frames)
        if fr.ndim != 5 or fr.shape[2:] != (cfg.in_channels, cfg.image_size, cfg.image_size):
            raise DimensionError(
                f"expected frames (T, B, {cfg.in_channels}, {cfg.image_size}, {cfg.image_size}), got {fr.shape}"
            )
        if fr.shape[0] != cfg.timesteps:
            raise ContractError(f"frames carry {fr.shape[0]} timesteps, config expects {cfg.timesteps}")
        raw = patchify(fr.astype(self.weight.dtype, copy=False), cfg.patch_size)
        x = self.project(Tensor(raw))
        if ledger is not None:
            t, b, n, _ = raw.shape
            if np.all((raw == 0) | (raw == 1)):
                ledger.spike_synapses(self.name, raw, cfg.embed_dim)
            else:
                ledger.analog_synapses(self.name, t, b * n, cfg.patch_dim, cfg.embed_dim)
            ledger.neuron_updates(self.name, x.shape)
        return lif_sequence(x, self.lif)


def encode_static(image, cfg: PatchConfig, sps: SpikingPatchSplit) -> SpikeTensor:
    if sps.cfg != cfg:
        raise ContractError("patch config does not match the module's config")
    return sps.encode_static(image)


def encode_events(frames, cfg: PatchConfig, sps: SpikingPatchSplit) -> SpikeTensor:
    if sps.cfg != cfg:
        raise ContractError("patch config does not match the module's config")
    return sps.encode_events(frames)
