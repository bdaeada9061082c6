import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spikingmoe.errors import ContractError, NumericError
from spikingmoe.gradcheck import check_gradients
from spikingmoe.neurons import LifParams, LifState, lif_sequence, lif_step, spike_norm
from spikingmoe.tensor import SpikeTensor, Tensor, backward, surrogate_shadow


def step_once(h, x, **kw):
    s, state, u = lif_step(Tensor([x], dtype=np.float64), LifState(Tensor([h], dtype=np.float64)), LifParams(**kw))
    return float(u.data[0]), float(s.data[0]), float(state.h.data[0])


def test_zero_input_stays_silent():
    assert step_once(0.0, 0.0) == (0.0, 0.0, 0.0)


def test_crossing_threshold_fires_and_resets():
    u, s, h = step_once(0.9, 0.3, u_th=1.0, v_reset=0.0, beta=0.25)
    assert u == pytest.approx(1.2) and s == 1.0 and h == 0.0


def test_subthreshold_leaks():
    u, s, h = step_once(0.4, 0.3, u_th=1.0, v_reset=0.0, beta=0.25)
    assert u == pytest.approx(0.7) and s == 0.0 and h == pytest.approx(0.175)


def test_exact_threshold_fires():
    assert step_once(0.0, 1.0)[1] == 1.0


def loop_oracle(x, p: LifParams):
    h = np.zeros(x.shape[1:])
    out = np.zeros_like(x)
    for t in range(x.shape[0]):
        u = h + x[t]
        s = (u >= p.u_th).astype(float)
        h = np.where(s > 0, p.v_reset, p.beta * u)
        out[t] = s
    return out


def test_sequence_matches_loop_oracle(rng):
    p = LifParams(u_th=1.0, beta=0.7)
    x = rng.normal(0.5, 1.0, (6, 3, 5))
    np.testing.assert_array_equal(lif_sequence(Tensor(x, dtype=np.float64), p).data, loop_oracle(x, p))


def test_sequence_examples():
    p = LifParams()
    assert not lif_sequence(Tensor(np.zeros((4, 3))), p).data.any()
    const = np.full((5, 2), p.u_th)
    assert lif_sequence(Tensor(const), p).data.all()
    assert spike_norm(Tensor(np.full((3, 2), 10.0)), p).data.all()
    assert not spike_norm(Tensor(np.zeros((3, 2))), p).data.any()


def test_sequence_output_type_and_errors():
    assert isinstance(lif_sequence(Tensor(np.ones((2, 2))), LifParams()), SpikeTensor)
    with pytest.raises(ContractError):
        lif_sequence(Tensor(np.zeros((0, 3))), LifParams())
    with pytest.raises(NumericError):
        lif_sequence(Tensor([[np.nan]]), LifParams())
    with pytest.raises(ContractError):
        LifParams(beta=1.5)
    with pytest.raises(ContractError):
        LifParams(u_th=0.0, v_reset=0.0)


finite = st.floats(-5, 5, allow_nan=False, width=32)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, (4, 6), elements=finite))
def test_output_always_binary(x):
    s = lif_sequence(Tensor(x), LifParams()).data
    assert set(np.unique(s)) <= {0.0, 1.0}


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, (4, 6), elements=finite), st.floats(0.1, 2.0), st.floats(0.0, 1.0))
def test_spike_count_monotone_in_threshold(x, th, extra):
    # lowering the threshold never removes a first spike; total count is non-increasing in u_th
    lo = lif_sequence(Tensor(x), LifParams(u_th=th)).data
    hi = lif_sequence(Tensor(x), LifParams(u_th=th + extra + 1e-3)).data
    first_lo = np.argmax(lo, axis=0) + (1 - lo.max(axis=0)) * 99
    first_hi = np.argmax(hi, axis=0) + (1 - hi.max(axis=0)) * 99
    assert np.all(first_lo <= first_hi)


@pytest.mark.parametrize("surrogate", ["rect", "atan"])
def test_step_gradients(f64, rng, surrogate):
    p = LifParams(beta=0.6, surrogate=surrogate, surrogate_width=2.0)
    x = Tensor(rng.normal(0.5, 0.4, (3, 4)), requires_grad=True)
    w = Tensor(rng.standard_normal((3, 4)))

    def f():
        with surrogate_shadow():
            state = LifState(Tensor(np.zeros((4,))))
            total = None
            for t in range(3):
                s, state, _ = lif_step(x[t], state, p)
                term = (s * w[t]).sum() + (state.h * w[t]).sum()
                total = term if total is None else total + term
            return total

    assert check_gradients(f, [x]) < 1e-3


def test_fused_sequence_matches_unrolled_steps(f64, rng):
    p = LifParams(beta=0.6, surrogate="atan")
    x_data = rng.normal(0.6, 0.5, (5, 7))
    w = rng.standard_normal((5, 7))
    a = Tensor(x_data, requires_grad=True)
    backward((lif_sequence(a, p) * Tensor(w)).sum())
    b = Tensor(x_data, requires_grad=True)
    state = LifState(Tensor(np.zeros(7)))
    total = Tensor(0.0)
    for t in range(5):
        s, state, _ = lif_step(b[t], state, p)
        total = total + (s * Tensor(w[t])).sum()
    backward(total)
    np.testing.assert_allclose(a.grad, b.grad, rtol=1e-10, atol=1e-12)


def test_fused_sequence_gradients_in_shadow(f64, rng):
    p = LifParams(beta=0.5, surrogate="atan")
    x = Tensor(rng.normal(0.6, 0.5, (4, 6)), requires_grad=True)
    w = Tensor(rng.standard_normal((4, 6)))

    def f():
        with surrogate_shadow():
            return (lif_sequence(x, p) * w).sum()

    assert check_gradients(f, [x]) < 1e-3


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (8, 3), elements=st.floats(-3, 3, allow_nan=False)), st.floats(0.1, 2.0),
       st.floats(0.0, 1.5), st.floats(0.05, 0.95))
def test_raising_threshold_never_adds_spikes(x, th, extra, beta):
    lo = lif_sequence(Tensor(x), LifParams(u_th=th, beta=beta)).data.sum()
    hi = lif_sequence(Tensor(x), LifParams(u_th=th + extra, beta=beta)).data.sum()
    assert hi <= lo
