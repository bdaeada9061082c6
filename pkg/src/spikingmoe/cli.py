"""Command-line entry point: ``spikemoe {train,eval,routing-stats,attn-export,profile,gen-data}``."""
from __future__ import annotations

import argparse
import json
import os
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from .checkpoint import atomic_write, load_checkpoint, restore_model
from .data import KINDS, ARRAY_MAGIC, DatasetSpec, gen_synthetic, load, save_dataset
from .energy import dense_equivalent, energy_estimate, profile_forward
from .model import ModelConfig
from .moe import load_entropy
from .neurons import LifParams
from .tensor import no_grad
from .training import OptimConfig, evaluate, train

# defaults for options that the config file may also set
DEFAULTS = {
    "seed": 0,
    "epochs": 20,
    "lr": 1e-3,
    "weight_decay": 0.01,
    "warmup": 0.0,
    "batch_size": 64,
    "timesteps": 4,
    "layers": 2,
    "dim": 64,
    "heads": 8,
    "experts": 4,
    "topk": 2,
    "alpha_aux": 0.1,
    "loss": "ce",
    "label_smoothing": 0.1,
    "data_kind": None,
    "data_path": None,
    "count": 256,
    "classes": 2,
    "image_size": 32,
    "patch_size": 4,
    "val_fraction": 0.0,
    "train_limit": None,
    "test_limit": None,
    "augment": True,
    "surrogate": "rect",
    "shared_always_on": False,
}


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--timesteps", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--experts", type=int)
    p.add_argument("--topk", type=int)
    p.add_argument("--alpha-aux", type=float)
    p.add_argument("--loss", choices=["ce", "tet"])
    p.add_argument("--label-smoothing", type=float)
    p.add_argument("--classes", type=int, help="number of classes (synthetic data)")
    p.add_argument("--image-size", type=int)
    p.add_argument("--patch-size", type=int)
    p.add_argument("--surrogate", choices=["rect", "atan"])
    p.add_argument("--shared-always-on", action="store_true", default=None)


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data-kind", choices=KINDS)
    p.add_argument("--data-path", "--data", dest="data_path")
    p.add_argument("--count", type=int, help="samples to generate when no data path is given")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spikemoe", description=__doc__)
    parser.add_argument("--config", help="JSON file of option defaults; flags override it")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write its best checkpoint")
    _add_model_flags(p)
    _add_data_flags(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--warmup", type=float, help="warm-up length in epochs")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--train-limit", type=int)
    p.add_argument("--test-limit", type=int)
    p.add_argument("--no-augment", dest="augment", action="store_false", default=None)
    p.add_argument("--checkpoint", default="runs/model.ckpt")
    p.add_argument("--out", default="runs", help="directory for metrics.jsonl and routing.jsonl")
    p.add_argument("--routing-log", action="store_true", help="also write per-batch routing records")

    p = sub.add_parser("eval", help="report top-1 accuracy of a checkpoint")
    _add_data_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["train", "test"], default="train")
    p.add_argument("--test-limit", type=int)
    p.add_argument("--batch-size", type=int)

    p = sub.add_parser("routing-stats", help="per-expert load tables and entropy")
    p.add_argument("--log", help="routing JSONL log to aggregate")
    p.add_argument("--checkpoint", help="run this checkpoint on --data instead of reading a log")
    _add_data_flags(p)
    p.add_argument("--split", choices=["train", "test"], default="train")
    p.add_argument("--out", help="also write the routing log here (checkpoint mode)")

    p = sub.add_parser("attn-export", help="write SDSA gate maps per layer as .npy arrays")
    p.add_argument("--checkpoint", required=True)
    _add_data_flags(p)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--samples", type=int, default=4)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("profile", help="AC/MAC ledger of one inference pass")
    p.add_argument("--checkpoint", help="model to profile; a fresh model from flags otherwise")
    _add_model_flags(p)
    _add_data_flags(p)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--samples", type=int, default=8)
    p.add_argument("--e-ac", type=float, default=0.9)
    p.add_argument("--e-mac", type=float, default=4.6)
    p.add_argument("--out", help="write the JSON-lines report here as well")

    p = sub.add_parser("gen-data", help="write a seeded synthetic dataset file")
    p.add_argument("--kind", "--data-kind", dest="data_kind", choices=KINDS[1:], required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--image-size", type=int)
    p.add_argument("--timesteps", type=int)
    p.add_argument("--out", required=True)
    return parser


def resolve(args: argparse.Namespace) -> argparse.Namespace:
    """Merge built-in defaults, the config file, then explicit flags (highest priority)."""
    merged = dict(DEFAULTS)
    if args.config:
        with open(args.config) as fh:
            file_cfg = json.load(fh)
        merged.update({k.replace("-", "_"): v for k, v in file_cfg.items()})
    for key, value in vars(args).items():
        if value is not None or key not in merged:
            merged[key] = value
    return argparse.Namespace(**merged)


def _infer_kind(path: str | None) -> str:
    if path is None:
        return "synthetic-static"
    p = Path(path)
    if p.is_file():
        with open(p, "rb") as fh:
            if fh.read(len(ARRAY_MAGIC)) == ARRAY_MAGIC:
                from .data import load_arrays

                return load_arrays(p)[1]["kind"]
    return "cifar10-binary"


def _dataset(a, split: str, limit: int | None = None, timesteps: int | None = None):
    kind = a.data_kind or _infer_kind(a.data_path)
    spec = DatasetSpec(kind=kind, path=a.data_path)
    return load(spec, split, seed=a.seed, count=a.count, num_classes=a.classes, image_size=a.image_size,
                timesteps=timesteps or a.timesteps, limit=limit)


def _model_config(a, ds) -> ModelConfig:
    events = ds.is_events
    return ModelConfig(
        layers=a.layers, embed_dim=a.dim, heads=a.heads, num_experts=a.experts, topk=a.topk,
        timesteps=a.timesteps, num_classes=ds.num_classes, image_size=ds.x.shape[-1],
        patch_size=a.patch_size, in_channels=ds.x.shape[-3], input_kind="events" if events else "static",
        lif=LifParams(surrogate=a.surrogate), alpha_aux=a.alpha_aux, loss_mode=a.loss,
        label_smoothing=a.label_smoothing, shared_always_on=bool(a.shared_always_on), seed=a.seed,
    )


def cmd_train(a) -> int:
    ds = _dataset(a, "train", a.train_limit)
    val = None
    if ds.kind == "cifar10-binary":
        val = _dataset(a, "test", a.test_limit)
    elif a.val_fraction:
        ds, val = ds.split(a.val_fraction, a.seed)
    mc = _model_config(a, ds)
    oc = OptimConfig(lr=a.lr, weight_decay=a.weight_decay, warmup_epochs=a.warmup, total_epochs=a.epochs,
                     seed=a.seed, batch_size=a.batch_size, augment=a.augment)
    out = Path(a.out)

    def report(h):
        extra = f" val_acc={h['val_acc']}" if "val_acc" in h else ""
        print(f"epoch {h['epoch']}: loss={h['loss']} train_acc={h['train_acc']}{extra} "
              f"entropy={h['load_entropy']}", flush=True)

    result = train(mc, oc, ds, val, log_path=out / "metrics.jsonl", checkpoint_path=a.checkpoint,
                   routing_log_path=out / "routing.jsonl" if a.routing_log else None, progress=report)
    print(f"best epoch {result.best_epoch}; checkpoint written to {a.checkpoint}")
    return 0


def _restore(a):
    ckpt = load_checkpoint(a.checkpoint)
    model = restore_model(ckpt)
    model.eval()
    return model


def cmd_eval(a) -> int:
    model = _restore(a)
    ds = _dataset(a, a.split, a.test_limit, model.cfg.timesteps)
    acc = evaluate(model, ds, a.batch_size)
    print(f"accuracy {acc:.1f}")
    return 0


def aggregate_routing(lines) -> dict[int, dict]:
    """Sum loads per layer over JSONL routing records."""
    totals: dict[int, np.ndarray] = defaultdict(lambda: None)
    for line in lines:
        line = line.strip()
        if not line:
            continue
        rec = json.loads(line)
        layer = int(rec.get("layer", 0))
        loads = np.asarray(rec["loads"], dtype=np.int64)
        totals[layer] = loads if totals[layer] is None else totals[layer] + loads
    out = {}
    for layer in sorted(totals):
        c = totals[layer]
        frac = c / c.sum() if c.sum() else c.astype(float)
        out[layer] = {"loads": c.tolist(), "fractions": [round(float(f), 6) for f in frac],
                      "entropy": round(load_entropy(c), 6)}
    return out


def cmd_routing_stats(a) -> int:
    if a.log:
        lines = Path(a.log).read_text().splitlines()
    elif a.checkpoint:
        model = _restore(a)
        ds = _dataset(a, a.split, None, model.cfg.timesteps)
        batches: list = []
        evaluate(model, ds, 64, routing=batches)
        lines = [json.dumps(rec.to_json(batch=b, layer=li), sort_keys=True)
                 for b, recs in enumerate(batches) for li, rec in enumerate(recs)]
        if a.out:
            atomic_write(a.out, ("\n".join(lines) + "\n").encode())
    else:
        print("routing-stats needs --log or --checkpoint", file=sys.stderr)
        return 2
    for layer, row in aggregate_routing(lines).items():
        print(f"layer {layer}: loads {row['fractions']} entropy {row['entropy']:.4f}")
    return 0


def cmd_attn_export(a) -> int:
    model = _restore(a)
    ds = _dataset(a, a.split, None, model.cfg.timesteps)
    idx = np.arange(min(a.samples, len(ds)))
    with no_grad():
        out = model.forward(ds.batch_inputs(idx), export_attn=True)
    dest = Path(a.out)
    dest.mkdir(parents=True, exist_ok=True)
    for name, g in out.attn_gates.items():
        path = dest / f"{name}.npy"
        np.save(path, np.ascontiguousarray(g, dtype="<f4"))
        print(f"{path}: shape {g.shape} (T, B, N, heads)")
    return 0


def cmd_profile(a) -> int:
    if a.checkpoint:
        model = _restore(a)
        ds = _dataset(a, a.split, None, model.cfg.timesteps)
    else:
        ds = _dataset(a, a.split)
        from .model import SpikingMoE

        model = SpikingMoE(_model_config(a, ds))
    idx = np.arange(min(a.samples, len(ds)))
    ledger = profile_forward(model, ds.batch_inputs(idx))
    text = ledger.report(a.e_ac, a.e_mac)
    dense = energy_estimate(dense_equivalent(ledger), a.e_ac, a.e_mac)
    text += json.dumps({"site": "DENSE_EQUIVALENT", "energy_pj": dense}, sort_keys=True) + "\n"
    sys.stdout.write(text)
    if a.out:
        atomic_write(a.out, text.encode())
    return 0


def cmd_gen_data(a) -> int:
    ds = gen_synthetic(a.data_kind, a.seed, a.count, a.classes, a.image_size, a.timesteps)
    save_dataset(a.out, ds)
    print(f"wrote {len(ds)} {a.data_kind} samples to {a.out}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "routing-stats": cmd_routing_stats,
    "attn-export": cmd_attn_export,
    "profile": cmd_profile,
    "gen-data": cmd_gen_data,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # usage errors exit with status 2
    threads = os.environ.get("SPIKEMOE_THREADS")
    try:
        a = resolve(args)
        if threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=int(threads)):
                return COMMANDS[a.command](a)
        return COMMANDS[a.command](a)
    except Exception as exc:  # noqa: BLE001
        print(f"spikemoe {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
