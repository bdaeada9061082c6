"""How the spiking gate routes tokens, and what the auxiliary loss sees."""
import numpy as np

from spikingmoe import LifParams, SpikeTensor
from spikingmoe.moe import ExpertMlp, MoeLayer, aux_loss, balance_loss, entropy_importance, load_entropy, moe_forward

rng = np.random.default_rng(1)
dim = 16
experts = [ExpertMlp(dim, 32, rng, LifParams(), 2.0, name=f"expert{e}") for e in range(4)]
layer = MoeLayer(dim, experts, k=2, rng=rng, gain=2.0)

s = SpikeTensor((rng.random((4, 2, 8, dim)) < 0.4).astype(np.float32))
out, record, _ = moe_forward(s, layer)

print("gate spike counts of the first three tokens (summed over time):")
print(record.gate_counts.data[:3])
print("chosen experts:", record.selected[:3].tolist())
print("tokens per expert:", record.loads.tolist(), "entropy", round(load_entropy(record.loads), 4), "nats")
print("expert invocations:", [e.calls for e in experts])
print("balance term", round(balance_loss(record), 4), " importance term", round(entropy_importance(record).item(), 4))
print("aux at alpha=0.1:", round(aux_loss(record, 0.1).item(), 5))

# A prompt shifts every token's gate the same way; a strong one steers all traffic.
layer.gate_weight.data[dim:, 3] = 5.0
layer.prompt.p.data[:] = 1.0
_, steered, _ = moe_forward(s, layer)
print("with a prompt favouring expert 3:", steered.loads.tolist())
