"""
Training the two-branch aggregator
==================================

Both branches see the same multi-layer stacks and learn per-layer linear
blocks mixed by trainable scalar weights. The semantic branch pulls matched
cells together everywhere; the visual branch pulls them together only where
nothing changed and pushes them apart inside the repainted regions.
"""

import csv

from _common import ensure_samples, OUT, TRAIN_CFG
from vsmatch.disentangle import layer_weight_table
from vsmatch.train import TrainConfig, train

samples = ensure_samples()

# Small but real: 16-wide output features, a few epochs, AdamW with step
# decay. The same config backs the later demos' checkpoint.
run_dir = OUT / "run"
params, history = train(samples, run_dir, TrainConfig(**TRAIN_CFG), seed=5)

print("loss per epoch (semantic / visual-in / visual-out / total):")
for row in history:
    print(f"  epoch {row['epoch']:2d}  lr {row['lr']:.0e}  "
          f"{row['l_s']:7.4f}  {row['l_v_in']:7.4f}  {row['l_v_out']:7.4f}  "
          f"{row['l_total']:8.4f}")
first, last = history[0], history[-1]
print(f"total loss {first['l_total']:.3f} -> {last['l_total']:.3f}")

# The learned scalar weights say which layers each branch trusts. The wide
# matching layer should dominate the semantic branch; appearance detail
# lives in the narrow layers.
print("\nlearned per-layer mixture weights:")
print("  branch    layer  weight")
for branch, layer_id, weight in layer_weight_table(params):
    print(f"  {branch:9s} {layer_id:3d}   {weight:+.4f}")

# Everything needed to resume or score is in the checkpoint; history.csv
# keeps the curve.
with open(run_dir / "history.csv") as handle:
    n_rows = sum(1 for _ in csv.reader(handle)) - 1
print(f"\ncheckpoints -> {run_dir} (final + one per epoch); "
      f"history.csv has {n_rows} rows")
