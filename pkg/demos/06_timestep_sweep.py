"""Accuracy as a function of the number of timesteps on a synthetic task.

Writes the report to runs/timestep_sweep.json. Takes about a minute.
"""
import json

from spikingmoe.data import gen_synthetic
from spikingmoe.model import ModelConfig
from spikingmoe.training import OptimConfig, timestep_sweep

train_ds = gen_synthetic("synthetic-static", 0, 256, num_classes=4)
test_ds = gen_synthetic("synthetic-static", 1_000_003, 128, num_classes=4)
cfg = ModelConfig(layers=1, embed_dim=32, heads=4, num_classes=4, patch_size=8)
report = timestep_sweep(cfg, OptimConfig(lr=5e-3, total_epochs=30, batch_size=32), train_ds, test_ds,
                        timesteps=(1, 2, 4, 8), report_path="runs/timestep_sweep.json")
for row in report["results"]:
    print(f"T={row['timesteps']}: {row['test_acc']:.1f}%")
print(json.dumps({k: v for k, v in report.items() if k != "results"}))
