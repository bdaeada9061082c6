"""Leaky integrate-and-fire neurons with surrogate-gradient spiking.

One LIF update reads

    u = h + x
    s = Heaviside(u - u_th)          (Heaviside(0) = 1)
    h' = v_reset * s + beta * u * (1 - s)

Forward spikes are exactly binary. The backward pass replaces the Heaviside
derivative with a surrogate; everything else is differentiated exactly,
reset path included.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractError, DimensionError, NumericError
from .tensor import SpikeTensor, Tensor, is_shadow_mode


@dataclass(frozen=True)
class LifParams:
    u_th: float = 1.0
    v_reset: float = 0.0
    beta: float = 0.5
    surrogate_width: float = 1.0
    surrogate: str = "rect"

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ContractError(f"beta must lie in (0, 1), got {self.beta}")
        if not self.u_th > self.v_reset:
            raise ContractError(f"u_th ({self.u_th}) must exceed v_reset ({self.v_reset})")
        if not self.surrogate_width > 0:
            raise ContractError("surrogate_width must be positive")
        if self.surrogate not in SURROGATES:
            raise ContractError(f"unknown surrogate {self.surrogate!r}; choose from {sorted(SURROGATES)}")

    def replace(self, **changes) -> "LifParams":
        return LifParams(**{**asdict(self), **changes})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LifState:
    h: Tensor


# Surrogates: x = u - u_th. ``primitive`` is the smooth stand-in used by the
# shadow forward; ``grad`` its derivative, used by every backward pass.
def _rect_primitive(x, w):
    return np.clip(x / w + 0.5, 0.0, 1.0)


def _rect_grad(x, w):
    return (np.abs(x) < w / 2).astype(x.dtype) / w


def _atan_primitive(x, w):
    # alpha = 2 / w gives peak slope 1 / w, matching the rectangle
    return np.arctan(np.pi / w * x) / np.pi + 0.5


def _atan_grad(x, w):
    return (1.0 / w) / (1.0 + (np.pi / w * x) ** 2)


SURROGATES = {
    "rect": (_rect_primitive, _rect_grad),
    "atan": (_atan_primitive, _atan_grad),
}


def fire(x: np.ndarray, params: LifParams) -> np.ndarray:
    """Spike values for centred potentials ``x`` (binary, or surrogate in shadow mode)."""
    if is_shadow_mode():
        return SURROGATES[params.surrogate][0](x, params.surrogate_width).astype(x.dtype)
    return (x >= 0).astype(x.dtype)


def surrogate_grad(x: np.ndarray, params: LifParams) -> np.ndarray:
    return SURROGATES[params.surrogate][1](x, params.surrogate_width).astype(x.dtype)


def heaviside(u: Tensor, params: LifParams) -> SpikeTensor:
    """Threshold node: ``Heaviside(u - u_th)`` with surrogate backward."""
    x = u.data - params.u_th
    return SpikeTensor._make(fire(x, params), (u,), lambda g: (g * surrogate_grad(x, params),), "heaviside")


def _check_finite(x: Tensor) -> None:
    if not np.all(np.isfinite(x.data)):
        raise NumericError("LIF input contains non-finite values")


def init_state(shape, dtype=np.float32) -> LifState:
    return LifState(Tensor(np.zeros(shape, dtype=dtype)))


def lif_step(x: Tensor, state: LifState, params: LifParams) -> tuple[SpikeTensor, LifState, Tensor]:
    """Advance one timestep; returns ``(spikes, new_state, u)``."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.shape != state.h.shape:
        raise DimensionError(f"input shape {x.shape} differs from state shape {state.h.shape}")
    _check_finite(x)
    u = state.h + x
    s = heaviside(u, params)
    h = s * params.v_reset + (u * params.beta) * (1.0 - s)
    return s, LifState(h), u


def lif_sequence(x_seq: Tensor, params: LifParams) -> SpikeTensor:
    """Run a LIF layer over the leading (time) axis starting from h = 0.

    Fused into one tape node: the forward loop stores u[t] and s[t], the
    backward pass runs the recursion in reverse.
    """
    if not isinstance(x_seq, Tensor):
        x_seq = Tensor(x_seq)
    if x_seq.ndim < 1 or x_seq.shape[0] == 0:
        raise ContractError("lif_sequence needs a non-empty leading time axis")
    _check_finite(x_seq)
    x = x_seq.data
    th, vr, beta = params.u_th, params.v_reset, params.beta
    us = np.empty_like(x)
    ss = np.empty_like(x)
    h = np.zeros(x.shape[1:], dtype=x.dtype)
    for t in range(x.shape[0]):
        u = h + x[t]
        s = fire(u - th, params)
        us[t] = u
        ss[t] = s
        h = vr * s + beta * u * (1.0 - s)

    def bw(g):
        sg = surrogate_grad(us - th, params)
        # d h[t] / d u[t] through both the reset and the leak branch
        dh_du = vr * sg + beta * (1.0 - ss) - beta * us * sg
        gx = np.empty_like(g)
        gh = np.zeros(g.shape[1:], dtype=g.dtype)
        for t in range(g.shape[0] - 1, -1, -1):
            gu = g[t] * sg[t] + gh * dh_du[t]
            gx[t] = gu
            gh = gu
        return (gx,)

    return SpikeTensor._make(ss, (x_seq,), bw, "lif")


def spike_norm(x: Tensor, params: LifParams) -> SpikeTensor:
    """SN(x): a LIF layer applied over time."""
    return lif_sequence(x, params)
