"""Minimal parameter container used by every network component."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Tensor, get_default_dtype


class Parameter(Tensor):
    """Trainable leaf tensor."""

    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(np.array(data, dtype=dtype or get_default_dtype()), requires_grad=True)


class Module:
    """Walks attributes to discover parameters, buffers and submodules.

    Buffers are non-trainable arrays (running statistics) listed in
    ``_buffers``. A submodule reachable along several paths is reported
    once, under the first path found.
    """

    _buffers: tuple[str, ...] = ()
    training: bool = True

    def _children(self) -> Iterator[tuple[str, object]]:
        for key, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{key}.{i}", item

    def _walk(self, prefix: str, seen: set[int]):
        for key, value in self._children():
            if id(value) in seen:
                continue
            seen.add(id(value))
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            else:
                yield name, value
                yield from value._walk(name + ".", seen)

    def named_parameters(self) -> list[tuple[str, Parameter]]:
        return [(n, v) for n, v in self._walk("", set()) if isinstance(v, Parameter)]

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_modules(self) -> list[tuple[str, "Module"]]:
        return [("", self)] + [(n, v) for n, v in self._walk("", set()) if isinstance(v, Module)]

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for name, mod in self.named_modules():
            for b in mod._buffers:
                out.append((f"{name}.{b}" if name else b, getattr(mod, b)))
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {n: p.data for n, p in self.named_parameters()}
        state.update(self.named_buffers())
        return state

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = np.zeros_like(p.data)

    def train(self, mode: bool = True) -> "Module":
        for _, mod in self.named_modules():
            mod.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def astype(self, dtype) -> "Module":
        """Cast all parameters and buffers in place (used for float64 gradient checks)."""
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for name, mod in self.named_modules():
            for b in mod._buffers:
                setattr(mod, b, getattr(mod, b).astype(dtype))
        return self


def init_weight(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float = 1.0) -> Parameter:
    """Gaussian weights with std ``gain / sqrt(fan_in)``."""
    return Parameter(rng.standard_normal((fan_in, fan_out)) * (gain / np.sqrt(fan_in)))


def zeros(*shape) -> Parameter:
    return Parameter(np.zeros(shape))
