# Object keypoint similarity and average precision
#
# OKS scores one predicted pose against one ground-truth pose, on a 0..1 scale
# that shrinks with squared distance relative to the object area.

import math

import numpy as np

from shufflepose.oks import GroundTruth, Prediction, average_precision, oks


def single(x, y):
    return np.array([[x, y, 2.0]])


# One keypoint, one pixel off, area 100, per-keypoint constant 0.1:
# exp(-1 / (2 * 100 * 0.01)) = exp(-0.5).

print("OKS:", oks(single(1.0, 0.0), single(0.0, 0.0), 100.0, np.array([0.1])), "vs", math.exp(-0.5))

# Three people and four predictions.  Predictions are matched greedily in
# score order; a duplicate of an already matched person counts as a false
# positive.  AP averages 101-point interpolated precision over OKS thresholds
# 0.50, 0.55, ..., 0.95.

area = 100.0


def at(gx, target):
    return gx + math.sqrt(-2 * area * 0.01 * math.log(target))


gts = [GroundTruth(single(x, 10.0), area) for x in (10.0, 50.0, 90.0)]
preds = [
    Prediction(single(at(10.0, 0.97), 10.0), 0.9),
    Prediction(single(at(10.0, 0.80), 10.0), 0.8),
    Prediction(single(at(50.0, 0.72), 10.0), 0.7),
    Prediction(single(at(90.0, 0.58), 10.0), 0.95),
]
summary = average_precision(preds, gts, kappas=np.array([0.1]))
for t, ap in summary.per_threshold.items():
    print(f"threshold {t:.2f}: AP {ap:.4f}")
print("\n".join(summary.report_lines()))
