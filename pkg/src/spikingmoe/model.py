"""The full network: patch splitting, L encoder layers, pooling and a linear head."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .attention import SdsaLayer, sdsa_membrane
from .energy import OpLedger
from .errors import ContractError, DimensionError
from .moe import ExpertMlp, MoeLayer, RoutingRecord, moe_forward
from .neurons import LifParams, lif_sequence
from .nn import Module, init_weight, zeros
from .sps import PatchConfig, SpikingPatchSplit
from .tensor import SpikeTensor, Tensor, log_softmax


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 2
    embed_dim: int = 256
    heads: int = 8
    num_experts: int = 4
    topk: int = 2
    timesteps: int = 4
    num_classes: int = 10
    image_size: int = 32
    patch_size: int = 4
    in_channels: int = 3
    input_kind: str = "static"  # or "events"
    hidden_ratio: int = 2
    prompt_len: int = 1
    lif: LifParams = field(default_factory=LifParams)
    attn_threshold: float = 1.0
    alpha_aux: float = 0.1
    loss_mode: str = "ce"  # or "tet"
    label_smoothing: float = 0.1
    shared_expert: bool = True
    shared_always_on: bool = False
    init_gain: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ContractError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if not 1 <= self.topk <= self.num_experts:
            raise ContractError(f"topk {self.topk} outside [1, {self.num_experts}]")
        if self.loss_mode not in ("ce", "tet"):
            raise ContractError(f"loss_mode must be 'ce' or 'tet', got {self.loss_mode!r}")
        if self.input_kind not in ("static", "events"):
            raise ContractError(f"input_kind must be 'static' or 'events', got {self.input_kind!r}")
        if self.layers < 1 or self.timesteps < 1:
            raise ContractError("layers and timesteps must be positive")
        if self.shared_always_on and not self.shared_expert:
            raise ContractError("shared_always_on requires shared_expert")
        PatchConfig(self.image_size, self.patch_size, self.in_channels, self.embed_dim, self.timesteps)

    @property
    def patch(self) -> PatchConfig:
        return PatchConfig(self.image_size, self.patch_size, self.in_channels, self.embed_dim, self.timesteps)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if isinstance(d.get("lif"), dict):
            d["lif"] = LifParams(**d["lif"])
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise ContractError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "ModelConfig":
        return ModelConfig.from_dict({**self.to_dict(), **changes})


@dataclass
class ModelOutput:
    logits: Tensor  # (B, classes)
    step_logits: Tensor  # (T, B, classes)
    routing: list[RoutingRecord]
    aux_total: Tensor
    attn_gates: dict[str, np.ndarray] | None = None
    boundaries: list[SpikeTensor] = field(default_factory=list)


class EncoderLayer(Module):
    def __init__(self, cfg: ModelConfig, idx: int, rng: np.random.Generator, shared: ExpertMlp | None):
        d = cfg.embed_dim
        lif = cfg.lif
        name = f"layers.{idx}"
        self.sdsa = SdsaLayer(d, cfg.heads, rng, lif, lif.replace(u_th=cfg.attn_threshold), cfg.init_gain,
                              name=f"{name}.sdsa")
        self.attn_lif = lif
        n_unique = cfg.num_experts - (shared is not None)
        experts = [
            ExpertMlp(d, d * cfg.hidden_ratio, rng, lif, cfg.init_gain, name=f"{name}.moe.experts.{e}")
            for e in range(n_unique)
        ]
        if shared is not None:
            experts.append(shared)
        self.moe = MoeLayer(
            d, experts, cfg.topk, rng, cfg.prompt_len, lif, lif, cfg.init_gain,
            shared_index=len(experts) - 1 if shared is not None else None,
            shared_always_on=cfg.shared_always_on, name=f"{name}.moe",
        )
        self.name = name


class SpikingMoE(Module):
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.sps = SpikingPatchSplit(cfg.patch, rng, cfg.lif)
        d = cfg.embed_dim
        # the shared expert is registered first so parameter names stay stable
        self.shared_expert = (
            ExpertMlp(d, d * cfg.hidden_ratio, rng, cfg.lif, cfg.init_gain, name="shared_expert")
            if cfg.shared_expert else None
        )
        self.layers = [EncoderLayer(cfg, i, rng, self.shared_expert) for i in range(cfg.layers)]
        self.head_w = init_weight(rng, d, cfg.num_classes)
        self.head_b = zeros(cfg.num_classes)

    def encode(self, inputs, ledger: OpLedger | None = None) -> SpikeTensor:
        if self.cfg.input_kind == "static":
            return self.sps.encode_static(inputs, ledger)
        return self.sps.encode_events(inputs, ledger)

    def forward(self, inputs, ledger: OpLedger | None = None, export_attn: bool = False,
                alpha_aux: float | None = None) -> ModelOutput:
        return self.forward_spikes(self.encode(inputs, ledger), ledger, export_attn, alpha_aux)

    def forward_spikes(self, s: SpikeTensor, ledger: OpLedger | None = None, export_attn: bool = False,
                       alpha_aux: float | None = None) -> ModelOutput:
        """Encoder stack and head applied to patch spikes S_0 of shape (T, B, N, D)."""
        cfg = self.cfg
        if s.ndim != 4 or s.shape[-1] != cfg.embed_dim:
            raise DimensionError(f"expected (T, B, N, {cfg.embed_dim}) spikes, got {s.shape}")
        alpha = cfg.alpha_aux if alpha_aux is None else alpha_aux
        boundaries = [s]
        routing = []
        aux_total = None
        gates: dict[str, np.ndarray] | None = {} if export_attn else None
        for layer in self.layers:
            # membrane shortcut: block output and residual spikes meet before SN
            m = sdsa_membrane(s, layer.sdsa, ledger, gates)
            if ledger is not None:
                ledger.neuron_updates(f"{layer.sdsa.name}.res", m.shape)
            s = lif_sequence(m + s, layer.attn_lif)
            boundaries.append(s)
            s, record, aux = moe_forward(s, layer.moe, ledger, alpha)
            boundaries.append(s)
            routing.append(record)
            aux_total = aux if aux_total is None else aux_total + aux
        t, b, n, d = s.shape
        pooled = s.mean(axis=2)  # (T, B, D) firing rates
        step_logits = pooled @ self.head_w + self.head_b
        if ledger is not None:
            ledger.analog_synapses("head", t, b, d, cfg.num_classes)
        logits = step_logits.mean(axis=0)
        return ModelOutput(logits, step_logits, routing, aux_total, gates, boundaries)

    __call__ = forward

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        """Copy arrays into parameters and buffers after checking every name and shape."""
        from .errors import FormatError, ShapeError

        own = self.state_dict()
        for name, arr in own.items():
            if name not in state:
                raise FormatError(f"checkpoint lacks tensor {name!r}")
            if tuple(state[name].shape) != tuple(arr.shape):
                raise ShapeError(name, arr.shape, state[name].shape)
        extra = set(state) - set(own)
        if extra:
            raise FormatError(f"checkpoint has unexpected tensors: {sorted(extra)[:5]}")
        params = dict(self.named_parameters())
        for name, arr in state.items():
            if name in params:
                params[name].data = np.array(arr, dtype=params[name].dtype)
            else:
                mod_name, buf = name.rsplit(".", 1)
                mod = dict(self.named_modules())[mod_name]
                setattr(mod, buf, np.array(arr, dtype=getattr(mod, buf).dtype))


def cross_entropy(logits: Tensor, labels: np.ndarray, smoothing: float = 0.0) -> Tensor:
    """Mean label-smoothed cross-entropy; targets are (1-eps)*onehot + eps/C."""
    b, c = logits.shape[-2:]
    target = np.full(logits.shape, smoothing / c, dtype=logits.dtype)
    idx = np.broadcast_to(labels, logits.shape[:-1])
    np.put_along_axis(target, idx[..., None], 1.0 - smoothing + smoothing / c, axis=-1)
    nll = -(log_softmax(logits, axis=-1) * target).sum(axis=-1)
    return nll.mean()


def loss(output: ModelOutput, labels, cfg: ModelConfig) -> Tensor:
    """Classification loss plus the (already weighted) auxiliary routing losses."""
    labels = np.asarray(labels, dtype=np.int64)
    c = output.logits.shape[-1]
    if labels.shape != output.logits.shape[:1]:
        raise DimensionError(f"labels shape {labels.shape} does not match batch {output.logits.shape[:1]}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ContractError(f"labels must lie in [0, {c})")
    if cfg.loss_mode == "tet":
        # per-timestep CE averaged over T (mean over the (T, B) grid)
        cls = cross_entropy(output.step_logits, labels, cfg.label_smoothing)
    else:
        cls = cross_entropy(output.logits, labels, cfg.label_smoothing)
    if output.aux_total is not None:
        cls = cls + output.aux_total
    return cls


def predict(output) -> np.ndarray:
    """Argmax class per sample; ties resolve to the lowest class index."""
    logits = output.logits if isinstance(output, ModelOutput) else output
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return np.argmax(data, axis=-1)
