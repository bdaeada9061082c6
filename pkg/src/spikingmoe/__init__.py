"""Spike-driven Transformer with a spiking mixture-of-experts, built on numpy."""
from .errors import ContractError, DimensionError, FormatError, NumericError, ShapeError
from .tensor import SpikeTensor, Tensor, backward, no_grad, surrogate_shadow
from .neurons import LifParams, LifState, lif_sequence, lif_step, spike_norm
from .model import ModelConfig, ModelOutput, SpikingMoE, loss, predict
from .energy import OpLedger, energy_estimate, profile_forward

__version__ = "0.1.0"
