"""Object keypoint similarity and OKS-based average precision / recall."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import ConfigError

# Per-keypoint standard deviations of the COCO keypoint metric; the falloff
# constant used here is twice that value.
COCO_SIGMAS = np.array([.26, .25, .25, .35, .35, .79, .79, .72, .72,
                        .62, .62, 1.07, 1.07, .87, .87, .89, .89]) / 10.0
COCO_KAPPAS = 2.0 * COCO_SIGMAS

DEFAULT_THRESHOLDS = tuple(float(t) for t in np.round(np.linspace(0.5, 0.95, 10), 2))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)


def uniform_kappas(num_keypoints: int, value: float = 0.1) -> np.ndarray:
    return np.full(num_keypoints, value)


def box_area(kps: np.ndarray, scale: float = 1.0) -> float:
    """Area of the tight box around the visible keypoints, times ``scale``."""
    vis = kps[kps[:, 2] > 0]
    if len(vis) == 0:
        return 0.0
    w = vis[:, 0].max() - vis[:, 0].min()
    h = vis[:, 1].max() - vis[:, 1].min()
    return float(w * h * scale)


def oks(pred: np.ndarray, gt: np.ndarray, area: float, kappas: Optional[np.ndarray] = None) -> float:
    """Mean over visible ground-truth keypoints of ``exp(-d^2 / (2 area k^2))``."""
    if area <= 0:
        raise ValueError(f"oks needs a positive area, got {area}")
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    kappas = uniform_kappas(len(gt)) if kappas is None else np.asarray(kappas, dtype=np.float64)
    if np.any(kappas <= 0):
        raise ConfigError("oks falloff constants must be positive")
    vis = gt[:, 2] > 0
    if not vis.any():
        return math.nan
    d2 = (pred[vis, 0] - gt[vis, 0]) ** 2 + (pred[vis, 1] - gt[vis, 1]) ** 2
    return float(np.mean(np.exp(-d2 / (2.0 * area * kappas[vis] ** 2))))


@dataclass
class Prediction:
    keypoints: np.ndarray
    score: float
    image_id: int = 0


@dataclass
class GroundTruth:
    keypoints: np.ndarray
    area: float
    image_id: int = 0


def oks_matrix(preds: Sequence[Prediction], gts: Sequence[GroundTruth], kappas=None) -> np.ndarray:
    """OKS between every prediction and every ground truth; -1 across images."""
    m = np.full((len(preds), len(gts)), -1.0)
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            if p.image_id == g.image_id:
                m[i, j] = oks(p.keypoints, g.keypoints, g.area, kappas)
    return m


def greedy_match(similarity: np.ndarray, order: Sequence[int], threshold: float) -> np.ndarray:
    """Match predictions (visited in ``order``) to the best free gt with OKS >= threshold.

    Returns, per prediction, the matched gt index or -1.
    """
    matched = np.full(similarity.shape[0], -1)
    taken = np.zeros(similarity.shape[1], dtype=bool)
    for i in order:
        best_j = -1
        for j in range(similarity.shape[1]):
            if taken[j] or similarity[i, j] < threshold:
                continue
            if best_j == -1 or similarity[i, j] > similarity[i, best_j]:
                best_j = j
        if best_j >= 0:
            taken[best_j] = True
            matched[i] = best_j
    return matched


def interpolated_ap(tp: np.ndarray, num_gt: int) -> tuple:
    """101-point interpolated AP and final recall from a score-ordered TP flag vector."""
    if len(tp) == 0:
        return 0.0, 0.0
    tps = np.cumsum(tp)
    fps = np.cumsum(1 - tp)
    recall = tps / num_gt
    precision = tps / np.maximum(tps + fps, np.spacing(1))
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < len(recall), envelope[np.minimum(idx, len(recall) - 1)], 0.0)
    return float(sampled.mean()), float(recall[-1])


@dataclass
class APSummary:
    ap: Optional[float]
    ap50: Optional[float]
    ap75: Optional[float]
    ar: Optional[float]
    per_threshold: Dict[float, float] = field(default_factory=dict)

    def report_lines(self) -> List[str]:
        def fmt(v):
            return "undefined" if v is None else f"{v:.6f}"

        return [f"AP={fmt(self.ap)}", f"AP50={fmt(self.ap50)}", f"AP75={fmt(self.ap75)}", f"AR={fmt(self.ar)}"]

    def text(self) -> str:
        return "\n".join(self.report_lines()) + "\n"


def _top_per_image(preds: Sequence[Prediction], max_dets: int) -> List[int]:
    kept = []
    for image_id in sorted({p.image_id for p in preds}):
        idx = [i for i, p in enumerate(preds) if p.image_id == image_id]
        idx.sort(key=lambda i: -preds[i].score)
        kept.extend(idx[:max_dets])
    return kept


def average_precision(preds: Sequence[Prediction], gts: Sequence[GroundTruth],
                      thresholds: Sequence[float] = DEFAULT_THRESHOLDS, kappas=None,
                      max_dets: int = 20) -> APSummary:
    """OKS-based AP/AR averaged over ``thresholds``.

    Ground truths without visible keypoints are ignored.  At most ``max_dets``
    highest-scoring predictions per image are kept.
    """
    for t in thresholds:
        if not 0 < t < 1:
            raise ValueError(f"OKS thresholds must lie in (0, 1), got {t}")
    gts = [g for g in gts if (np.asarray(g.keypoints)[:, 2] > 0).any()]
    if not gts:
        if preds:
            zero = {float(t): 0.0 for t in thresholds}
            return APSummary(0.0, zero.get(0.5), zero.get(0.75), 0.0, zero)
        return APSummary(None, None, None, None)
    kept = _top_per_image(preds, max_dets)
    preds = [preds[i] for i in kept]
    order = sorted(range(len(preds)), key=lambda i: -preds[i].score)
    sim = oks_matrix(preds, gts, kappas)

    per_t, recalls = {}, []
    for t in thresholds:
        matched = greedy_match(sim, order, t)
        tp = np.array([1 if matched[i] >= 0 else 0 for i in order])
        ap, rec = interpolated_ap(tp, len(gts))
        per_t[float(t)] = ap
        recalls.append(rec)
    return APSummary(
        ap=float(np.mean(list(per_t.values()))),
        ap50=per_t.get(0.5),
        ap75=per_t.get(0.75),
        ar=float(np.mean(recalls)),
        per_threshold=per_t,
    )
