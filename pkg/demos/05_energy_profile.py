"""Per-site accumulate/multiply counts of one inference pass, and the energy estimate.

Only the patch embedding (analog pixels in) and the classifier head
(averaged rates in) multiply. Every layer between them adds weight rows
selected by spikes.
"""
import numpy as np

from spikingmoe import ModelConfig, SpikingMoE, energy_estimate, profile_forward
from spikingmoe.energy import dense_equivalent

cfg = ModelConfig(layers=2, embed_dim=64, heads=8, num_classes=10)
model = SpikingMoE(cfg)
images = np.random.default_rng(0).random((4, 3, 32, 32)).astype(np.float32)
ledger = profile_forward(model, images)

print(f"{'site':34s} {'AC':>10s} {'MAC':>10s}")
for site, c in ledger.by_layer(depth=3).items():
    print(f"{site:34s} {c.ac_count:10d} {c.mac_count:10d}")
print("interior MAC:", ledger.interior_mac())

spiking = energy_estimate(ledger)
dense = energy_estimate(dense_equivalent(ledger))
print(f"spiking {spiking / 1e6:.2f} uJ vs same-shape dense {dense / 1e6:.2f} uJ ({dense / spiking:.1f}x)")
