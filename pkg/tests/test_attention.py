import numpy as np
import pytest

from spikingmoe.attention import SdsaLayer, count_sdsa_ops, sdsa, sdsa_gates, spike_linear
from spikingmoe.bitops import and_popcount, headwise_and_popcount, pack_bits, popcount, unpack_bits
from spikingmoe.errors import ContractError, DimensionError
from spikingmoe.gradcheck import check_gradients
from spikingmoe.neurons import LifParams
from spikingmoe.tensor import SpikeTensor, Tensor, backward, iter_graph, surrogate_shadow

from conftest import random_spikes


def lif_oracle(x, p):
    h = np.zeros(x.shape[1:])
    out = np.zeros_like(x)
    for t in range(x.shape[0]):
        u = h + x[t]
        s = (u >= p.u_th).astype(x.dtype)
        h = p.v_reset * s + p.beta * u * (1 - s)
        out[t] = s
    return out


def naive_sdsa(s, layer: SdsaLayer):
    """Materializes the full Hadamard product Q*K per head before summing channels."""
    d = lambda p: p.data.astype(np.float64)  # noqa: E731
    q = lif_oracle(s @ d(layer.w_q) + d(layer.b_q), layer.lif_q)
    k = lif_oracle(s @ d(layer.w_k) + d(layer.b_k), layer.lif_k)
    v = lif_oracle(s @ d(layer.w_v) + d(layer.b_v), layer.lif_v)
    t, b, n, dim = q.shape
    hd = layer.head_dim
    g = np.zeros((t, b, n, layer.heads))
    for h in range(layer.heads):
        qk = q[..., h * hd : (h + 1) * hd] * k[..., h * hd : (h + 1) * hd]
        g[..., h] = qk.sum(axis=-1)
    g = lif_oracle(g, layer.lif_attn)
    gated = v * np.repeat(g, hd, axis=-1)
    return lif_oracle(gated @ d(layer.w_out) + d(layer.b_out), layer.lif_out)


def make_layer(rng, dim=16, heads=2):
    return SdsaLayer(dim, heads, rng, LifParams(), LifParams(u_th=0.5), gain=2.0)


def test_bit_kernels(rng):
    a = rng.random((3, 19)) < 0.5
    b = rng.random((3, 19)) < 0.5
    pa, pb = pack_bits(a), pack_bits(b)
    np.testing.assert_array_equal(unpack_bits(pa, 19), a)
    np.testing.assert_array_equal(popcount(pa), a.sum(axis=-1))
    np.testing.assert_array_equal(and_popcount(pa, pb), (a & b).sum(axis=-1))
    q = rng.random((2, 5, 12)) < 0.5
    k = rng.random((2, 5, 12)) < 0.5
    expect = (q & k).reshape(2, 5, 3, 4).sum(-1)
    np.testing.assert_array_equal(headwise_and_popcount(q.astype(np.float32), k.astype(np.float32), 3), expect)


def test_spike_linear_examples(rng):
    w = Tensor(np.eye(4))
    zero = SpikeTensor(np.zeros((3, 1, 4)))
    assert not spike_linear(zero, w, LifParams()).data.any()
    onehot = np.zeros((3, 1, 4))
    onehot[:, 0, 2] = 1
    out = spike_linear(SpikeTensor(onehot), w, LifParams(u_th=0.5))
    np.testing.assert_array_equal(out.data, onehot)
    with pytest.raises(DimensionError):
        spike_linear(zero, Tensor(np.eye(3)), LifParams())


def test_hand_evaluated_gate_input():
    layer = SdsaLayer(2, 1, np.random.default_rng(0), LifParams(), LifParams(u_th=0.5))
    # projections chosen so that Q = [1, 1] and K = [1, 0] for input [1, 1]
    layer.w_q.data = np.eye(2, dtype=np.float32) * 2
    layer.w_k.data = np.array([[2.0, 0.0], [0.0, 0.0]], dtype=np.float32)
    layer.w_v.data = np.eye(2, dtype=np.float32) * 2
    s = SpikeTensor(np.ones((1, 1, 1, 2), dtype=np.float32))
    q, k, v, g = sdsa_gates(s, layer)
    np.testing.assert_array_equal(q.data.ravel(), [1, 1])
    np.testing.assert_array_equal(k.data.ravel(), [1, 0])
    a = (q.data * k.data).sum()
    assert a == 1.0 and g.data.ravel()[0] == 1.0


def test_zero_query_gives_zero_output(rng):
    layer = make_layer(rng)
    layer.w_q.data[:] = 0
    out = sdsa(SpikeTensor(random_spikes(rng, (2, 2, 8, 16))), layer)
    assert not out.data.any()


@pytest.mark.parametrize("seed", range(10))
def test_matches_naive_reference(seed):
    r = np.random.default_rng(seed)
    layer = make_layer(r)
    s = random_spikes(r, (2, 2, 8, 16), p=0.4)
    out = sdsa(SpikeTensor(s), layer)
    np.testing.assert_array_equal(out.data, naive_sdsa(s.astype(np.float64), layer))


def test_no_token_by_token_node(rng):
    n = 5
    layer = make_layer(rng)
    s = SpikeTensor(random_spikes(rng, (2, 2, n, 16)))
    root = sdsa(s, layer).sum()
    shapes = [node.shape for node in iter_graph(root)]
    assert not any(len(sh) >= 2 and sh[-2:] == (n, n) for sh in shapes)


def test_token_permutation_equivariance(rng):
    layer = make_layer(rng)
    s = random_spikes(rng, (2, 1, 8, 16))
    perm = rng.permutation(8)
    out = sdsa(SpikeTensor(s), layer).data
    out_perm = sdsa(SpikeTensor(s[:, :, perm]), layer).data
    np.testing.assert_array_equal(out[:, :, perm], out_perm)


def test_rejects_non_binary(rng):
    with pytest.raises(ContractError):
        sdsa(Tensor(np.full((1, 1, 2, 16), 0.5)), make_layer(rng))


def test_op_counts(rng):
    layer = make_layer(rng)
    zero = count_sdsa_ops(SpikeTensor(np.zeros((2, 1, 4, 16), dtype=np.float32)), layer).total()
    assert zero.ac_count == 0 and zero.mac_count == 0

    for w in (layer.w_q, layer.w_k, layer.w_v, layer.w_out):
        w.data = np.eye(16, dtype=np.float32)
    s = np.zeros((1, 1, 1, 16), dtype=np.float32)
    s[..., 3] = 1
    ledger = count_sdsa_ops(SpikeTensor(s), layer)
    sites = ledger.by_layer()
    # the single hot unit fans out to all 16 outputs of each projection
    for key in ("q", "k", "v"):
        assert sites[f"sdsa.{key}"].ac_count == 16
    assert ledger.total().mac_count == 0


def test_random_inputs_never_multiply(rng):
    layer = make_layer(rng)
    for _ in range(5):
        ledger = count_sdsa_ops(SpikeTensor(random_spikes(rng, (2, 2, 6, 16))), layer)
        assert ledger.total().mac_count == 0 and ledger.total().ac_count > 0


def test_spike_linear_gradients(f64, rng):
    s = SpikeTensor(random_spikes(rng, (2, 4, 8)).astype(np.float64))
    w = Tensor(rng.normal(0, 0.6, (8, 8)), requires_grad=True)
    b = Tensor(rng.normal(0.3, 0.2, 8), requires_grad=True)
    probe = Tensor(rng.standard_normal((2, 4, 8)))
    p = LifParams(surrogate="atan")

    def f():
        with surrogate_shadow():
            return (spike_linear(s, w, p, b) * probe).sum()

    assert check_gradients(f, [w, b]) < 1e-3


def test_sdsa_gradients(f64, rng):
    p = LifParams(surrogate="atan", surrogate_width=2.0)
    layer = SdsaLayer(8, 2, rng, p, p.replace(u_th=0.5), gain=2.0).astype(np.float64)
    s = SpikeTensor(random_spikes(rng, (2, 1, 4, 8)).astype(np.float64))
    probe = Tensor(rng.standard_normal((2, 1, 4, 8)))

    def f():
        with surrogate_shadow():
            return (sdsa(s, layer) * probe).sum()

    params = layer.parameters()
    assert check_gradients(f, params) < 1e-3


def test_backward_reaches_every_projection(rng):
    layer = make_layer(rng)
    s = SpikeTensor(random_spikes(rng, (2, 2, 6, 16), p=0.5))
    backward(sdsa(s, layer).sum())
    for name, p in layer.named_parameters():
        assert p.grad is not None and p.grad.shape == p.shape, name
