"""Spike-driven self-attention on random spikes, with its operation count.

The per-head gate is a LIF read-out of how many channels Q and K share.
It costs one popcount per token and head, so doubling the token count
doubles the work instead of quadrupling it.
"""
import numpy as np

from spikingmoe import LifParams, SpikeTensor
from spikingmoe.attention import SdsaLayer, count_sdsa_ops, sdsa, sdsa_gates

rng = np.random.default_rng(0)
layer = SdsaLayer(dim=32, heads=4, rng=rng, lif=LifParams(), attn_lif=LifParams(u_th=0.5), gain=2.0)

s = SpikeTensor((rng.random((4, 1, 16, 32)) < 0.3).astype(np.float32))
q, k, v, g = sdsa_gates(s, layer)
print("gate map g (T, B, N, heads):", g.shape, "open fraction", round(float(g.data.mean()), 3))
out = sdsa(s, layer)
print("output spikes:", out.shape, "firing rate", round(float(out.data.mean()), 3))

for n in (16, 32, 64, 128):
    x = SpikeTensor((rng.random((4, 1, n, 32)) < 0.3).astype(np.float32))
    tot = count_sdsa_ops(x, layer).total()
    print(f"N={n:4d}: AC={tot.ac_count:8d}  MAC={tot.mac_count}")
