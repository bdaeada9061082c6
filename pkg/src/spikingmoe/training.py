"""AdamW with a warm-up + cosine schedule, the training loop, and the timestep sweep."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, atomic_write, model_checkpoint
from .data import Dataset, augment
from .energy import energy_estimate, profile_forward
from .errors import ContractError, NumericError
from .model import ModelConfig, SpikingMoE, loss, predict
from .moe import load_entropy
from .tensor import no_grad


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 1e-3
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    warmup_epochs: float = 0.0
    total_epochs: int = 10
    seed: int = 0
    batch_size: int = 64
    augment: bool = True

    def __post_init__(self):
        if self.lr < 0:
            raise ContractError("lr must be non-negative")
        if not 0 <= self.warmup_epochs <= self.total_epochs:
            raise ContractError("need 0 <= warmup_epochs <= total_epochs")
        if self.batch_size < 1:
            raise ContractError("batch_size must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


def lr_at(epoch: float, cfg: OptimConfig) -> float:
    """Linear warm-up from 0, then half-cosine decay to 0 at ``total_epochs``."""
    if cfg.warmup_epochs > 0 and epoch < cfg.warmup_epochs:
        return cfg.lr * epoch / cfg.warmup_epochs
    span = cfg.total_epochs - cfg.warmup_epochs
    progress = 1.0 if span <= 0 else min(max((epoch - cfg.warmup_epochs) / span, 0.0), 1.0)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def adamw_step(params, grads, state: dict, cfg: OptimConfig, t: int, lr: float | None = None,
               decay_mask=None, names=None):
    """One decoupled-weight-decay Adam update of plain arrays; ``t`` counts from 1.

    Returns ``(new_params, state)`` where state holds lists ``m`` and ``v``.
    """
    lr = cfg.lr if lr is None else lr
    b1, b2 = cfg.betas
    if not state:
        state["m"] = [np.zeros_like(p) for p in params]
        state["v"] = [np.zeros_like(p) for p in params]
    new = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if not np.all(np.isfinite(g)):
            label = names[i] if names is not None else f"#{i}"
            raise NumericError(f"non-finite gradient in parameter {label}")
        m = state["m"][i] = b1 * state["m"][i] + (1 - b1) * g
        v = state["v"][i] = b2 * state["v"][i] + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        wd = cfg.weight_decay if decay_mask is None or decay_mask[i] else 0.0
        p = p * (1 - lr * wd) - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        new.append(p.astype(params[i].dtype, copy=False))
    return new, state


class AdamW:
    """Stateful wrapper over :func:`adamw_step` for a model's named parameters."""

    def __init__(self, named_params, cfg: OptimConfig):
        self.names = [n for n, _ in named_params]
        self.params = [p for _, p in named_params]
        self.cfg = cfg
        self.state: dict = {}
        self.step_count = 0
        # decay matrices only; biases, norms and the prompt are left alone
        self.decay_mask = [p.ndim >= 2 and "prompt" not in n for n, p in named_params]

    def step(self, lr: float) -> None:
        self.step_count += 1
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        new, self.state = adamw_step(
            [p.data for p in self.params], grads, self.state, self.cfg, self.step_count, lr,
            self.decay_mask, self.names,
        )
        for p, d in zip(self.params, new):
            p.data = d

    def state_dict(self) -> dict:
        if not self.state:
            zero = {n: np.zeros_like(p.data) for n, p in zip(self.names, self.params)}
            return {"step": self.step_count, "m": zero, "v": dict(zero)}
        return {
            "step": self.step_count,
            "m": dict(zip(self.names, self.state["m"])),
            "v": dict(zip(self.names, self.state["v"])),
        }


@dataclass
class TrainResult:
    history: list[dict]
    checkpoint: Checkpoint
    model: SpikingMoE
    best_epoch: int
    routing_log: list[str] = field(default_factory=list)


def evaluate(model: SpikingMoE, ds: Dataset, batch_size: int = 128, routing: list | None = None) -> float:
    """Top-1 accuracy in percent; appends routing records to ``routing`` when given."""
    was_training = model.training
    model.eval()
    correct = 0
    try:
        with no_grad():
            for start in range(0, len(ds), batch_size):
                idx = np.arange(start, min(start + batch_size, len(ds)))
                out = model.forward(ds.batch_inputs(idx))
                correct += int((predict(out) == ds.y[idx]).sum())
                if routing is not None:
                    routing.append(out.routing)
    finally:
        model.train(was_training)
    return 100.0 * correct / max(len(ds), 1)


def _round(x: float) -> float:
    return float(f"{x:.6g}")


def train(model_cfg: ModelConfig, optim_cfg: OptimConfig, dataset: Dataset, val: Dataset | None = None,
          log_path=None, checkpoint_path=None, routing_log_path=None, eval_train: bool = True,
          probe_size: int = 8, progress=None) -> TrainResult:
    """Train from scratch; fully determined by the two configs and the data.

    Each epoch appends a metrics record (loss, accuracies, aux loss, expert
    loads, AC/MAC totals of a fixed probe batch). The checkpoint kept is the
    one with the best validation accuracy, or clean training accuracy when no
    validation split is given.
    """
    if len(dataset) == 0:
        raise ContractError("dataset is empty")
    model = SpikingMoE(model_cfg)
    model.train()
    named = model.named_parameters()
    opt = AdamW(named, optim_cfg)
    rng = np.random.default_rng(optim_cfg.seed)
    steps_per_epoch = math.ceil(len(dataset) / optim_cfg.batch_size)
    probe = (val if val is not None else dataset).batch_inputs(np.arange(min(probe_size, len(val or dataset))))
    history: list[dict] = []
    routing_lines: list[str] = []
    best_score, best_ckpt, best_epoch = -1.0, None, -1
    log_lines: list[str] = []

    for epoch in range(optim_cfg.total_epochs):
        order = rng.permutation(len(dataset))
        tot_loss = tot_aux = 0.0
        correct = 0
        loads = np.zeros((model_cfg.layers, model_cfg.num_experts), dtype=np.int64)
        for step in range(steps_per_epoch):
            idx = np.sort(order[step * optim_cfg.batch_size : (step + 1) * optim_cfg.batch_size])
            x = dataset.batch_inputs(idx)
            if optim_cfg.augment:
                x = augment(x, rng, events=dataset.is_events) if not dataset.is_events else _augment_events(x, rng)
            out = model.forward(x)
            total = loss(out, dataset.y[idx], model_cfg)
            model.zero_grad()
            total.backward()
            opt.step(lr_at(epoch + step / steps_per_epoch, optim_cfg))
            n = len(idx)
            tot_loss += total.item() * n
            aux = out.aux_total.item() if out.aux_total is not None else 0.0
            tot_aux += aux * n
            correct += int((predict(out) == dataset.y[idx]).sum())
            for li, rec in enumerate(out.routing):
                loads[li] += rec.loads
                if routing_log_path is not None:
                    routing_lines.append(json.dumps(rec.to_json(epoch=epoch, batch=step, layer=li), sort_keys=True))
        ledger = profile_forward(model, probe)
        tot = ledger.total()
        record = {
            "epoch": epoch,
            "lr": _round(lr_at(epoch + 1, optim_cfg)),
            "loss": _round(tot_loss / len(dataset)),
            "aux": _round(tot_aux / len(dataset)),
            "train_acc": _round(100.0 * correct / len(dataset)),
            "loads": loads.tolist(),
            "load_entropy": [_round(load_entropy(row)) for row in loads],
            "ac": tot.ac_count,
            "mac": tot.mac_count,
            "interior_mac": ledger.interior_mac(),
            "energy_pj": _round(energy_estimate(ledger)),
        }
        if eval_train:
            record["train_eval_acc"] = _round(evaluate(model, dataset, optim_cfg.batch_size))
        if val is not None:
            record["val_acc"] = _round(evaluate(model, val, optim_cfg.batch_size))
        history.append(record)
        log_lines.append(json.dumps(record, sort_keys=True))
        if progress is not None:
            progress(record)
        score = record.get("val_acc", record.get("train_eval_acc", record["train_acc"]))
        if score > best_score:
            best_score, best_epoch = score, epoch
            best_ckpt = model_checkpoint(model, {"epoch": epoch, **{k: record[k] for k in record if k.endswith("acc")}},
                                         opt)
        if log_path is not None:
            atomic_write(log_path, ("\n".join(log_lines) + "\n").encode())

    if best_ckpt is None:  # zero epochs
        best_ckpt = model_checkpoint(model, {}, opt)
    if checkpoint_path is not None:
        atomic_write(checkpoint_path, best_ckpt.to_bytes())
    if routing_log_path is not None:
        atomic_write(routing_log_path, ("\n".join(routing_lines) + "\n").encode())
    return TrainResult(history, best_ckpt, model, best_epoch, routing_lines)


def _augment_events(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # time-major (T, B, C, H, W): flip per sample, same flip at every step
    flip = rng.random(x.shape[1]) < 0.5
    x = x.copy()
    x[:, flip] = x[:, flip][..., ::-1]
    return x


def timestep_sweep(model_cfg: ModelConfig, optim_cfg: OptimConfig, train_ds: Dataset, test_ds: Dataset,
                   timesteps=(1, 2, 4, 8), report_path=None) -> dict:
    """Train one model per T and record test accuracy.

    The report lists ``(T, accuracy)`` pairs in ascending T plus flags saying
    whether accuracy is non-decreasing / non-increasing in T and where the
    peak lies, so the shape of the curve can be checked at a glance.
    """
    rows = []
    for t in sorted(timesteps):
        cfg = model_cfg.replace(timesteps=t)
        result = train(cfg, optim_cfg, train_ds, eval_train=False)
        model = result.model
        acc = evaluate(model, test_ds, optim_cfg.batch_size)
        rows.append({"timesteps": t, "test_acc": _round(acc), "final_loss": result.history[-1]["loss"]})
    accs = [r["test_acc"] for r in rows]
    report = {
        "results": rows,
        "non_decreasing": all(a <= b for a, b in zip(accs, accs[1:])),
        "non_increasing": all(a >= b for a, b in zip(accs, accs[1:])),
        "peak_timesteps": rows[int(np.argmax(accs))]["timesteps"],
    }
    if report_path is not None:
        atomic_write(report_path, (json.dumps(report, sort_keys=True, indent=2) + "\n").encode())
    return report
