import numpy as np
import pytest

from spikingmoe.attention import spike_linear
from spikingmoe.energy import OpLedger, dense_equivalent, energy_estimate, profile_forward
from spikingmoe.errors import ContractError
from spikingmoe.model import SpikingMoE
from spikingmoe.neurons import LifParams
from spikingmoe.tensor import SpikeTensor, Tensor, no_grad

from conftest import random_spikes, tiny_config
from oracles import instrumented_forward, quantize_model


def ledger_table(ledger):
    return {k: (c.ac_count, c.mac_count) for k, c in ledger.entries.items() if c.ac_count or c.mac_count}


def toy_model(**kw):
    model = SpikingMoE(tiny_config(embed_dim=8, heads=2, num_classes=3, **kw))
    quantize_model(model)
    return model.eval()


@pytest.mark.parametrize("seed", range(4))
def test_matches_instrumented_reference_on_two_tokens(seed):
    r = np.random.default_rng(seed)
    model = toy_model(layers=2, timesteps=3, shared_always_on=bool(seed % 2))
    s0 = random_spikes(r, (3, 2, 2, 8), p=0.5)
    ledger = OpLedger()
    with no_grad():
        out = model.forward_spikes(SpikeTensor(s0), ledger)
    logits, ctr = instrumented_forward(model, s0)
    assert ledger_table(ledger) == ctr.table()
    np.testing.assert_allclose(out.logits.data, logits, rtol=0, atol=1e-6)


def test_one_spike_into_four_outputs():
    ledger = OpLedger()
    s = np.zeros((1, 1, 3))
    s[0, 0, 1] = 1
    spike_linear(SpikeTensor(s), Tensor(np.ones((3, 4))), LifParams(), ledger=ledger, site="x")
    assert ledger.total().ac_count == 4 and ledger.total().mac_count == 0


def test_silent_interior_costs_nothing():
    model = toy_model()
    for p in model.layers[0].moe.parameters():
        p.data[:] = 0
    for name, p in model.layers[0].sdsa.named_parameters():
        p.data[:] = 0
    ledger = OpLedger()
    with no_grad():
        model.forward_spikes(SpikeTensor(np.zeros((2, 1, 4, 8), dtype=np.float32)), ledger)
    assert sum(c.ac_count for c in ledger.interior().values()) == 0


def test_energy_examples():
    assert energy_estimate(OpLedger()) == 0.0
    ledger = OpLedger()
    ledger.add("x", 0, ac_count=10)
    assert energy_estimate(ledger, e_ac=0.9) == pytest.approx(9.0)
    with pytest.raises(ContractError):
        energy_estimate(ledger, e_ac=-1.0)


def test_energy_linear_and_monotone(rng):
    a, b = OpLedger(), OpLedger()
    a.add("x", 0, ac_count=int(rng.integers(100)), mac_count=int(rng.integers(100)))
    b.add("y", 1, ac_count=int(rng.integers(100)), mac_count=int(rng.integers(100)))
    assert energy_estimate(a + b) == pytest.approx(energy_estimate(a) + energy_estimate(b))
    bigger = a + OpLedger()
    bigger.add("x", 0, ac_count=1)
    assert energy_estimate(bigger) > energy_estimate(a)


def test_spiking_model_cheaper_than_dense(rng):
    model = SpikingMoE(tiny_config())
    ledger = profile_forward(model, rng.random((2, 3, 8, 8)).astype(np.float32))
    assert energy_estimate(ledger) < energy_estimate(dense_equivalent(ledger))


def test_interior_never_multiplies(rng):
    for seed in range(5):
        model = SpikingMoE(tiny_config(seed=seed, layers=2))
        ledger = profile_forward(model, rng.random((2, 3, 8, 8)).astype(np.float32))
        assert ledger.interior_mac() == 0
        assert ledger.by_layer(1)["sps"].mac_count > 0


def test_report_lines(rng):
    ledger = profile_forward(SpikingMoE(tiny_config()), rng.random((1, 3, 8, 8)).astype(np.float32))
    lines = ledger.report().strip().splitlines()
    assert '"site": "TOTAL"' in lines[-1]
    assert '"interior_mac": 0' in lines[-1]


from hypothesis import given, settings
from hypothesis import strategies as st


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 0.9))
def test_denser_input_never_lowers_synaptic_ac(seed, p):
    # adding spikes to a layer's input only adds selected weight rows
    r = np.random.default_rng(seed)
    sparse = r.random((3, 4, 8)) < p
    dense = sparse | (r.random((3, 4, 8)) < 0.3)
    w = Tensor(r.standard_normal((8, 6)))
    counts = []
    for s in (sparse, dense):
        ledger = OpLedger()
        spike_linear(SpikeTensor(s.astype(np.float32)), w, LifParams(), ledger=ledger, site="x")
        counts.append(ledger.total().ac_count)
    assert counts[1] >= counts[0]


def test_batch_ledger_is_sum_of_sample_ledgers(rng):
    model = SpikingMoE(tiny_config(layers=2))
    x = rng.random((3, 3, 8, 8)).astype(np.float32)
    whole = profile_forward(model, x)
    parts = OpLedger()
    for i in range(3):
        parts = parts + profile_forward(model, x[i : i + 1])
    assert whole == parts
