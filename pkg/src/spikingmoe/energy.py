"""Exact AC/MAC operation accounting and energy estimates.

Synaptic work is split by operand type. A weight row added because a binary
input spiked is an accumulate (AC); a weight multiplied by a real-valued
activation is a multiply-accumulate (MAC). Scalar arithmetic on membrane
values (leak, 1/k averaging) is tallied separately as ``neuron_ops``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ContractError

E_AC_PJ = 0.9
E_MAC_PJ = 4.6

# op sites that read analog values; every other site is on the spike path
EDGE_LAYERS = ("sps", "head")


@dataclass
class OpCount:
    ac_count: int = 0
    mac_count: int = 0
    spike_count: int = 0
    theoretical_ac: int = 0
    neuron_ops: int = 0
    dense_ops: int = 0

    def __iadd__(self, other: "OpCount") -> "OpCount":
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self


class OpLedger:
    """Counts keyed by ``(site, timestep)``; sites are dotted names like ``layers.0.sdsa.q``."""

    def __init__(self):
        self.entries: dict[tuple[str, int], OpCount] = {}

    def _slot(self, site: str, t: int) -> OpCount:
        key = (site, int(t))
        if key not in self.entries:
            self.entries[key] = OpCount()
        return self.entries[key]

    def add(self, site: str, t: int, **counts: int) -> None:
        slot = self._slot(site, t)
        for name, value in counts.items():
            if value < 0:
                raise ContractError(f"negative {name} count for {site}")
            setattr(slot, name, getattr(slot, name) + int(value))

    # -- recording helpers ----------------------------------------------------
    def spike_synapses(self, site: str, spikes: np.ndarray, fan_out: int) -> None:
        """Binary input ``spikes`` (time-leading) driving a dense layer of ``fan_out`` outputs."""
        flat = spikes.reshape(spikes.shape[0], -1)
        dense = flat.shape[1] * fan_out
        for t, n in enumerate(np.count_nonzero(flat, axis=1)):
            n = int(n)
            self.add(site, t, ac_count=n * fan_out, spike_count=n, theoretical_ac=n * fan_out, dense_ops=dense)

    def analog_synapses(self, site: str, timesteps: int, rows: int, fan_in: int, fan_out: int) -> None:
        for t in range(timesteps):
            n = rows * fan_in * fan_out
            self.add(site, t, mac_count=n, dense_ops=n)

    def neuron_updates(self, site: str, shape: tuple) -> None:
        """One leak multiply per neuron per timestep."""
        per_t = int(np.prod(shape[1:]))
        for t in range(shape[0]):
            self.add(site, t, neuron_ops=per_t)

    # -- queries --------------------------------------------------------------
    def merge(self, other: "OpLedger") -> "OpLedger":
        out = OpLedger()
        for src in (self, other):
            for key, c in sorted(src.entries.items()):
                slot = out._slot(*key)
                slot += c
        return out

    __add__ = merge

    def total(self) -> OpCount:
        acc = OpCount()
        for c in self.entries.values():
            acc += c
        return acc

    def by_layer(self, depth: int | None = None) -> dict[str, OpCount]:
        """Totals per site; ``depth`` truncates names to that many dotted components."""
        out: dict[str, OpCount] = {}
        for (site, _), c in sorted(self.entries.items()):
            key = site if depth is None else ".".join(site.split(".")[:depth])
            out.setdefault(key, OpCount())
            out[key] += c
        return out

    def interior(self) -> dict[tuple[str, int], OpCount]:
        return {k: v for k, v in self.entries.items() if k[0].split(".")[0] not in EDGE_LAYERS}

    def interior_mac(self) -> int:
        return sum(c.mac_count for c in self.interior().values())

    def as_dict(self) -> dict:
        return {f"{s}@{t}": asdict(c) for (s, t), c in sorted(self.entries.items())}

    def __eq__(self, other) -> bool:
        if not isinstance(other, OpLedger):
            return NotImplemented
        drop = lambda e: {k: v for k, v in e.items() if v != OpCount()}  # noqa: E731
        return drop(self.entries) == drop(other.entries)

    def report(self, e_ac: float = E_AC_PJ, e_mac: float = E_MAC_PJ) -> str:
        """JSON-lines report: one line per site, then a totals line."""
        lines = []
        for site, c in self.by_layer().items():
            lines.append(json.dumps({"site": site, **asdict(c)}, sort_keys=True))
        tot = self.total()
        lines.append(
            json.dumps(
                {
                    "site": "TOTAL",
                    **asdict(tot),
                    "interior_mac": self.interior_mac(),
                    "energy_pj": energy_estimate(self, e_ac, e_mac),
                },
                sort_keys=True,
            )
        )
        return "\n".join(lines) + "\n"


def energy_estimate(ledger: OpLedger, e_ac: float = E_AC_PJ, e_mac: float = E_MAC_PJ) -> float:
    """Synaptic energy in picojoules: ``e_ac * AC + e_mac * MAC``."""
    if e_ac < 0 or e_mac < 0:
        raise ContractError("energy constants must be non-negative")
    tot = ledger.total()
    return e_ac * tot.ac_count + e_mac * tot.mac_count


def dense_equivalent(ledger: OpLedger) -> OpLedger:
    """Ledger of a same-shape non-spiking network: every synapse is a MAC at every step."""
    out = OpLedger()
    for (site, t), c in ledger.entries.items():
        out.add(site, t, mac_count=c.dense_ops, dense_ops=c.dense_ops, neuron_ops=c.neuron_ops)
    return out


def profile_forward(model, inputs) -> OpLedger:
    """Run one inference pass of ``model`` and return its exact op ledger."""
    from .tensor import no_grad

    ledger = OpLedger()
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            model.forward(inputs, ledger=ledger)
    finally:
        model.train(was_training)
    return ledger
