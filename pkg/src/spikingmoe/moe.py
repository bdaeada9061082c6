"""Spiking mixture-of-experts with prompt-conditioned gating.

The gate sees each token's spike vector concatenated with a learnable prompt
and emits K binary gate channels per timestep. Each token is routed to the k
experts with the most gate spikes over time (ties go to the lowest index);
only those experts run on it, and their outputs are averaged with weight 1/k.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .attention import spike_linear
from .energy import OpLedger
from .errors import ContractError, DimensionError
from .neurons import LifParams, lif_sequence
from .nn import Module, Parameter, init_weight, zeros
from .tensor import SpikeTensor, Tensor, index_add, require_binary

LOAD_EPS = 1e-8


class ExpertMlp(Module):
    """Two-layer spike MLP: spike_linear to the hidden width, then a plain linear map back."""

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator, lif: LifParams | None = None,
                 gain: float = 1.0, name: str = "expert"):
        self.w1 = init_weight(rng, dim, hidden, gain)
        self.b1 = zeros(hidden)
        self.w2 = init_weight(rng, hidden, dim, gain)
        self.b2 = zeros(dim)
        self.lif1 = lif or LifParams()
        self.name = name
        self.calls = 0  # token-evaluations since the last reset


def expert_forward(s: Tensor, e: ExpertMlp, ledger: OpLedger | None = None) -> Tensor:
    """Real-valued expert output for spikes ``s`` of shape (T, M, D)."""
    if s.shape[-1] != e.w1.shape[0]:
        raise DimensionError(f"expert expects {e.w1.shape[0]} channels, got {s.shape[-1]}")
    e.calls += int(np.prod(s.shape[1:-1]))
    hidden = spike_linear(s, e.w1, e.lif1, e.b1, ledger, f"{e.name}.fc1")
    if ledger is not None:
        ledger.spike_synapses(f"{e.name}.fc2", hidden.data, e.w2.shape[1])
    return hidden @ e.w2 + e.b2


class SdPrompt(Module):
    def __init__(self, length: int, dim: int, rng: np.random.Generator | None = None, scale: float = 0.0):
        init = np.zeros((length, dim)) if rng is None or scale == 0 else rng.standard_normal((length, dim)) * scale
        self.p = Parameter(init)

    @property
    def flat_dim(self) -> int:
        return self.p.size


@dataclass
class RoutingRecord:
    """Routing outcome of one MoE pass over M = B*N tokens.

    ``gate_counts`` keeps its tape link so the importance term can send
    gradient into the gate; ``selected`` and ``loads`` are hard decisions.
    """

    gate_counts: Tensor  # (M, K) spike counts summed over time
    token_shape: tuple = ()
    selected: np.ndarray | None = None  # (M, k) expert indices, ascending rank order
    loads: np.ndarray | None = None  # (K,) routed-token count per expert
    n_routed: int = 0
    candidates: np.ndarray | None = None  # experts competing for load balance
    extras: dict = field(default_factory=dict)

    @property
    def num_experts(self) -> int:
        return self.gate_counts.shape[-1]

    @property
    def num_tokens(self) -> int:
        return self.gate_counts.shape[0]

    def to_json(self, **meta) -> dict:
        out = dict(meta)
        out.update(
            tokens=self.num_tokens,
            experts=self.num_experts,
            selected=self.selected.tolist(),
            gate_counts=np.asarray(self.gate_counts.data).round(6).tolist(),
            loads=self.loads.tolist(),
            n_routed=int(self.n_routed),
        )
        return out


class MoeLayer(Module):
    """Gate, prompt and K experts; ``experts`` may include a module shared with other layers."""

    def __init__(self, dim: int, experts: list[ExpertMlp], k: int, rng: np.random.Generator,
                 prompt_len: int = 1, gate_lif: LifParams | None = None, out_lif: LifParams | None = None,
                 gain: float = 1.0, shared_index: int | None = None, shared_always_on: bool = False,
                 name: str = "moe"):
        if not 1 <= k <= len(experts):
            raise ContractError(f"k={k} must lie in [1, {len(experts)}]")
        self.dim = dim
        self.k = k
        self.experts = list(experts)
        self.prompt = SdPrompt(prompt_len, dim)
        self.gate_weight = init_weight(rng, dim + self.prompt.flat_dim, len(experts), gain)
        self.gate_bias = zeros(len(experts))
        self.gate_lif = gate_lif or LifParams()
        self.out_lif = out_lif or LifParams()
        self.shared_index = shared_index
        self.shared_always_on = shared_always_on
        self.name = name

    @property
    def num_experts(self) -> int:
        return len(self.experts)


def gate(s_l: Tensor, prompt: SdPrompt, layer: MoeLayer, ledger: OpLedger | None = None):
    """Binary gate spikes G (T, B, N, K) and a record holding their time-summed counts."""
    require_binary(s_l, "gate input")
    d = s_l.shape[-1]
    if layer.gate_weight.shape[0] != d + prompt.flat_dim:
        raise DimensionError(
            f"gate weight expects {layer.gate_weight.shape[0]} inputs, token+prompt give {d + prompt.flat_dim}"
        )
    # [S; P] @ W == S @ W[:D] + P @ W[D:]; the prompt half is a constant bias once
    # training is over, so like a folded normalization it is not charged to the ledger
    w_spike = layer.gate_weight[:d]
    w_prompt = layer.gate_weight[d:]
    prompt_bias = prompt.p.reshape(1, prompt.flat_dim) @ w_prompt
    bias = prompt_bias.reshape(-1) + layer.gate_bias
    site = f"{layer.name}.gate"
    g = spike_linear(s_l, w_spike, layer.gate_lif, bias, ledger, site)
    t, b, n, kk = g.shape
    counts = g.sum(axis=0).reshape(b * n, kk)
    return g, RoutingRecord(gate_counts=counts, token_shape=(b, n))


def _candidates(num_experts: int, forced: int | None) -> np.ndarray:
    return np.array([e for e in range(num_experts) if e != forced], dtype=np.int64)


def select_topk(record: RoutingRecord, k: int, forced: int | None = None) -> RoutingRecord:
    """Pick each token's k experts by accumulated gate activity.

    ``forced`` names an expert placed in every token's selection before the
    remaining k-1 are ranked; it is then excluded from the balance target.
    """
    counts = np.asarray(record.gate_counts.data)
    m, kk = counts.shape
    if not 1 <= k <= kk:
        raise ContractError(f"k={k} must lie in [1, {kk}]")
    cand = _candidates(kk, forced)
    free = k - (forced is not None)
    # stable sort on negated counts: equal counts keep ascending expert order
    order = np.argsort(-counts[:, cand], axis=1, kind="stable")[:, :free]
    picked = cand[order]
    if forced is not None:
        picked = np.concatenate([np.full((m, 1), forced, dtype=np.int64), picked], axis=1)
    loads = np.bincount(picked.reshape(-1), minlength=kk).astype(np.int64)
    return replace(record, selected=picked, loads=loads, n_routed=len(cand), candidates=cand)


def moe_forward(s_l: Tensor, layer: MoeLayer, ledger: OpLedger | None = None, alpha: float = 0.0,
                importance=None):
    """Sparse MoE block with membrane residual: returns ``(spikes, record, aux)``."""
    require_binary(s_l, "moe input")
    t, b, n, d = s_l.shape
    _, record = gate(s_l, layer.prompt, layer, ledger)
    forced = layer.shared_index if layer.shared_always_on else None
    record = select_topk(record, layer.k, forced)
    tokens = s_l.reshape(t, b * n, d)
    routed = moe_combine(tokens, record, layer, ledger)
    membrane = routed.reshape(t, b, n, d) + s_l
    if ledger is not None:
        ledger.neuron_updates(f"{layer.name}.out", membrane.shape)
    out = lif_sequence(membrane, layer.out_lif)
    return out, record, aux_loss(record, alpha, importance)


def moe_combine(tokens: Tensor, record: RoutingRecord, layer: MoeLayer, ledger: OpLedger | None = None) -> Tensor:
    """(1/k) * sum of selected expert outputs; unselected experts never run on a token."""
    t, m, d = tokens.shape
    out = Tensor(np.zeros((t, m, d), dtype=tokens.dtype))
    for e, expert in enumerate(layer.experts):
        idx = np.flatnonzero((record.selected == e).any(axis=1))
        if idx.size == 0:
            continue
        y = expert_forward(tokens.take(idx, axis=1), expert, ledger)
        out = index_add(out, 1, idx, y)
    if ledger is not None:
        ledger.neuron_updates(f"{layer.name}.avg", (t, m, d))
    return out * (1.0 / layer.k)


def moe_dense_reference(tokens: Tensor, record: RoutingRecord, layer: MoeLayer) -> Tensor:
    """Evaluate every expert on every token and zero-mask the unselected ones."""
    t, m, d = tokens.shape
    mask = np.zeros((m, layer.num_experts), dtype=tokens.dtype)
    np.put_along_axis(mask, record.selected, 1.0, axis=1)
    out = Tensor(np.zeros((t, m, d), dtype=tokens.dtype))
    for e, expert in enumerate(layer.experts):
        y = expert_forward(tokens, expert)
        out = out + y * mask[:, e : e + 1]
    return out * (1.0 / layer.k)


def _fractions(c: np.ndarray) -> np.ndarray:
    # the epsilon only guards an all-zero load vector; adding it to a positive
    # total would bias every fraction by about eps / total
    total = c.sum()
    return c / (total if total > 0 else LOAD_EPS)


def load_fractions(record: RoutingRecord) -> np.ndarray:
    return _fractions(record.loads.astype(np.float64))


def balance_loss(record: RoutingRecord) -> float:
    """n_routed * MSE(u, u*) over the candidate experts, with u the load fractions."""
    if record.loads is None:
        raise ContractError("record has no loads; run select_topk first")
    cand = record.candidates if record.candidates is not None else np.arange(record.num_experts)
    n_routed = record.n_routed or len(cand)
    u = _fractions(record.loads[cand].astype(np.float64))
    target = np.full_like(u, 1.0 / n_routed)
    return float(n_routed * np.mean((u - target) ** 2))


def entropy_importance(record: RoutingRecord) -> Tensor:
    """Normalized entropy of the mean per-token gate-activity distribution, in [0, 1]."""
    counts = record.gate_counts
    cand = record.candidates if record.candidates is not None else np.arange(record.num_experts)
    if len(cand) != counts.shape[1]:
        counts = counts.take(cand, axis=1)
    per_token = counts / (counts.sum(axis=1, keepdims=True) + LOAD_EPS)
    mean = per_token.mean(axis=0)
    p = mean / (mean.sum() + LOAD_EPS)
    ent = -(p * (p + 1e-12).log()).sum()
    return ent * (1.0 / np.log(max(len(cand), 2)))


def aux_loss(record: RoutingRecord, alpha: float, importance=None) -> Tensor:
    """alpha * (L_balance - L_importance); ``importance`` overrides the entropy term."""
    if record.num_tokens == 0:
        raise ContractError("routing record is empty")
    dtype = record.gate_counts.dtype
    if alpha == 0.0:
        return Tensor(np.zeros((), dtype=dtype))
    imp = (importance or entropy_importance)(record)
    return (imp * -1.0 + balance_loss(record)) * float(alpha)


def load_entropy(loads: np.ndarray) -> float:
    """Shannon entropy (nats) of a load vector normalized to a distribution."""
    c = np.asarray(loads, dtype=np.float64)
    total = c.sum()
    if total <= 0:
        return 0.0
    p = c[c > 0] / total
    # p * log(p) is -0.0 for a single expert; adding 0.0 normalizes the sign
    return float(-(p * np.log(p)).sum()) + 0.0
