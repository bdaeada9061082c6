"""Train a one-layer model on a small synthetic task and save the best checkpoint.

Run: python demos/04_train_tiny.py [output-dir]
"""
import sys
from pathlib import Path

from spikingmoe.checkpoint import load_checkpoint, restore_model
from spikingmoe.data import gen_synthetic
from spikingmoe.model import ModelConfig
from spikingmoe.training import OptimConfig, evaluate, train

out = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/demo")
train_ds = gen_synthetic("synthetic-static", seed=0, count=128, num_classes=4)
test_ds = gen_synthetic("synthetic-static", seed=1, count=128, num_classes=4)

model_cfg = ModelConfig(layers=1, embed_dim=32, heads=4, num_classes=4, patch_size=8, timesteps=4)
optim_cfg = OptimConfig(lr=5e-3, total_epochs=20, batch_size=32, warmup_epochs=2)


def show(rec):
    print(f"epoch {rec['epoch']:2d}  loss {rec['loss']:.4f}  train {rec['train_eval_acc']:5.1f}%  "
          f"val {rec['val_acc']:5.1f}%  loads {rec['loads'][0]}")


result = train(model_cfg, optim_cfg, train_ds, val=test_ds, log_path=out / "metrics.jsonl",
               checkpoint_path=out / "model.ckpt", progress=show)
restored = restore_model(load_checkpoint(out / "model.ckpt"))
print(f"best epoch {result.best_epoch}; restored model scores {evaluate(restored, test_ds):.1f}% on held-out data")
