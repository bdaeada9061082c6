"""Spike-driven self-attention.

Per head, the channel sum of Q_S * K_S gives one scalar per token and
timestep; a LIF layer turns it into a binary gate that masks that head's
slice of V_S. No token-by-token score matrix is ever formed, so cost and
memory grow linearly with the token count.
"""
from __future__ import annotations

import numpy as np

from .bitops import headwise_and_popcount
from .energy import OpLedger
from .errors import ContractError, DimensionError
from .neurons import LifParams, lif_sequence
from .nn import Module, Parameter, init_weight, zeros
from .tensor import SpikeTensor, Tensor, require_binary


def spike_linear(s: Tensor, w: Tensor, lif: LifParams, bias: Tensor | None = None,
                 ledger: OpLedger | None = None, site: str = "") -> SpikeTensor:
    """Dense map of binary input followed by a LIF layer.

    With a binary operand the product is a sum of weight rows selected by
    spikes, so it is charged as accumulates only.
    """
    if s.shape[-1] != w.shape[0]:
        raise DimensionError(f"input channels {s.shape[-1]} do not match weight rows {w.shape[0]}")
    x = s @ w
    if bias is not None:
        x = x + bias
    if ledger is not None:
        ledger.spike_synapses(site, s.data, w.shape[1])
        ledger.neuron_updates(site, x.shape)
    return lif_sequence(x, lif)


class SdsaLayer(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator, lif: LifParams | None = None,
                 attn_lif: LifParams | None = None, gain: float = 1.0, name: str = "sdsa"):
        if dim % heads:
            raise ContractError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.w_q = init_weight(rng, dim, dim, gain)
        self.w_k = init_weight(rng, dim, dim, gain)
        self.w_v = init_weight(rng, dim, dim, gain)
        self.w_out = init_weight(rng, dim, dim, gain)
        self.b_q, self.b_k, self.b_v, self.b_out = (zeros(dim) for _ in range(4))
        lif = lif or LifParams()
        self.lif_q = self.lif_k = self.lif_v = self.lif_out = lif
        self.lif_attn = attn_lif or lif
        self.name = name

    @property
    def projections(self) -> dict[str, tuple[Parameter, Parameter, LifParams]]:
        return {
            "q": (self.w_q, self.b_q, self.lif_q),
            "k": (self.w_k, self.b_k, self.lif_k),
            "v": (self.w_v, self.b_v, self.lif_v),
        }


def sdsa_gates(s_in: Tensor, layer: SdsaLayer, ledger: OpLedger | None = None):
    """Q/K/V spikes and the per-head gate ``g`` of shape (T, B, N, heads)."""
    qkv = {
        key: spike_linear(s_in, w, lif, b, ledger, f"{layer.name}.{key}")
        for key, (w, b, lif) in layer.projections.items()
    }
    q, k, v = qkv["q"], qkv["k"], qkv["v"]
    *lead, d = q.shape
    split = (*lead, layer.heads, layer.head_dim)
    a = (q.reshape(split) * k.reshape(split)).sum(axis=-1)
    g = lif_sequence(a, layer.lif_attn)
    if ledger is not None:
        pairs = headwise_and_popcount(q.data, k.data, layer.heads)
        site = f"{layer.name}.qk"
        for t in range(pairs.shape[0]):
            nq = int(np.count_nonzero(q.data[t]))
            ledger.add(site, t, ac_count=int(pairs[t].sum()), theoretical_ac=nq, dense_ops=q.data[t].size)
        ledger.neuron_updates(f"{layer.name}.attn", a.shape)
    return q, k, v, g


def sdsa_membrane(s_in: Tensor, layer: SdsaLayer, ledger: OpLedger | None = None,
                  export: dict | None = None) -> Tensor:
    """Pre-SN output of the attention block: ``(g * V_S) @ w_out + b_out``."""
    require_binary(s_in, "sdsa input")
    if s_in.ndim != 4 or s_in.shape[-1] != layer.dim:
        raise DimensionError(f"expected (T, B, N, {layer.dim}) spikes, got {s_in.shape}")
    q, k, v, g = sdsa_gates(s_in, layer, ledger)
    t, b, n, d = v.shape
    gated = (v.reshape(t, b, n, layer.heads, layer.head_dim) * g.reshape(t, b, n, layer.heads, 1)).reshape(t, b, n, d)
    if export is not None:
        export[layer.name] = g.data.copy()
    if ledger is not None:
        site = f"{layer.name}.v_gate"
        for step in range(t):
            nv = int(np.count_nonzero(v.data[step]))
            passed = int(np.count_nonzero(gated.data[step]))
            ledger.add(site, step, ac_count=passed, theoretical_ac=nv, dense_ops=v.data[step].size)
        ledger.spike_synapses(f"{layer.name}.out", gated.data, layer.dim)
    return gated @ layer.w_out + layer.b_out


def sdsa(s_in: Tensor, layer: SdsaLayer, ledger: OpLedger | None = None) -> SpikeTensor:
    """Attention block output as spikes: the output projection followed by SN."""
    m = sdsa_membrane(s_in, layer, ledger)
    if ledger is not None:
        ledger.neuron_updates(f"{layer.name}.out", m.shape)
    return lif_sequence(m, layer.lif_out)


def count_sdsa_ops(s_in: Tensor, layer: SdsaLayer) -> OpLedger:
    from .tensor import no_grad

    ledger = OpLedger()
    with no_grad():
        sdsa(s_in, layer, ledger)
    return ledger
