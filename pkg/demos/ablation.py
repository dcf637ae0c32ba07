# Component ablation on the synthetic benchmark
#
# Four models share data, seed and schedule: the baseline, the baseline with
# the channel shuffle module (4 groups), the baseline with attention
# bottlenecks (spatial then channel) in the refinement stage, and both.
# The report lists AP/AP50/AP75/AR on held-out figures and the final loss.
# At this scale the ordering between rows is an observation, not a claim.

import sys

from shufflepose.config import parse_config
from shufflepose.pipeline import run_ablation

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 30
out = sys.argv[2] if len(sys.argv) > 2 else None
cfg = parse_config(f"num_samples = 64\neval_samples = 16\nbatch_size = 2\ntotal_epochs = {epochs}\n")
print(run_ablation(cfg, out).text(), end="")
