"""A single LIF neuron driven by a ramp, printed step by step.

Run: python demos/01_lif_neuron.py
"""
import numpy as np

from spikingmoe import LifParams, LifState, Tensor, lif_sequence, lif_step

params = LifParams(u_th=1.0, v_reset=0.0, beta=0.5)
drive = np.linspace(0.1, 0.9, 9)

print(" t   input   membrane  spike  carried")
state = LifState(Tensor(np.zeros(1)))
for t, x in enumerate(drive):
    s, state, u = lif_step(Tensor([x]), state, params)
    print(f"{t:2d}   {x:5.2f}   {u.data[0]:8.3f}  {int(s.data[0]):5d}  {state.h.data[0]:7.3f}")

# The fused sequence op gives the same spikes in one call.
fused = lif_sequence(Tensor(drive[:, None]), params).data[:, 0]
print("fused spikes:", fused.astype(int).tolist())

# A weaker leak keeps more charge, so the neuron fires earlier and more often.
for beta in (0.2, 0.5, 0.9):
    n = int(lif_sequence(Tensor(np.full((20, 1), 0.4)), params.replace(beta=beta)).data.sum())
    print(f"beta={beta}: {n} spikes in 20 steps of constant 0.4 input")
