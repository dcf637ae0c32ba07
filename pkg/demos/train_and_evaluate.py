# Train a small model on synthetic stick figures, then evaluate and infer
#
# Every sample is a rendered 17-joint figure with known joints.  Training uses
# Adam with rotation/scale augmentation; evaluation uses flip-averaged
# heatmaps, quarter-offset decoding and OKS AP on held-out figures.

import sys
import tempfile
from pathlib import Path

import numpy as np

from shufflepose.config import parse_config
from shufflepose.pipeline import evaluate, infer, load_model, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 10
cfg = parse_config(f"num_samples = 64\neval_samples = 16\nbatch_size = 2\ntotal_epochs = {epochs}\n")
print(f"training for {epochs} epochs, lr decays at epochs {cfg.train.decay_epochs}")

out = Path(tempfile.mkdtemp())
result = train(cfg, out)
losses = result.losses
print(f"{len(losses)} steps, loss {losses[0]:.4f} -> {np.mean(losses[-32:]):.4f} (mean of last epoch)")
print("log head:", (out / "loss.log").read_text().splitlines()[1][:80], "...")

# Reload from the checkpoint and score held-out figures.

model = load_model(cfg, out / "checkpoint.ppck")
summary, _ = evaluate(model, cfg)
print("\n".join(summary.report_lines()))

# Raw inference: heatmaps plus decoded joints for a batch of images.

images = np.zeros((2, 3, 128, 96))
heatmaps, records = infer(model, images)
print("heatmaps", heatmaps.shape, "first record keypoints", records[0].keypoints.shape)
