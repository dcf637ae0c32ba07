"""Gaussian heatmap targets, quarter-offset decoding and flip-averaged inference.

A keypoint set is a ``(K, 3)`` float array of ``(x, y, v)`` rows in input
pixels, with COCO visibility ``v`` in {0, 1, 2}.  Heatmap cell ``(i, j)``
corresponds to input pixel ``(x, y) = (4 j, 4 i)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)

STRIDE = 4

COCO_KEYPOINTS = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)
COCO_FLIP_PAIRS = ((1, 2), (3, 4), (5, 6), (7, 8), (9, 10), (11, 12), (13, 14), (15, 16))


def encode(kps: np.ndarray, out_h: int, out_w: int, sigma: float = 2.0, return_clamped: bool = False):
    """Render one Gaussian per keypoint on the ``(out_h, out_w)`` grid.

    Channel ``k`` is ``exp(-((i - y/4)^2 + (j - x/4)^2) / (2 sigma^2))``; invisible
    keypoints give an all-zero channel.  Visible keypoints falling off the grid
    are clamped onto its border.
    """
    if sigma <= 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    kps = np.asarray(kps, dtype=np.float64)
    hm = np.zeros((kps.shape[0], out_h, out_w))
    ii = np.arange(out_h)[:, None]
    jj = np.arange(out_w)[None, :]
    clamped = 0
    for k, (x, y, v) in enumerate(kps):
        if v <= 0:
            continue
        cx, cy = x / STRIDE, y / STRIDE
        if not (0 <= cx <= out_w - 1 and 0 <= cy <= out_h - 1):
            clamped += 1
            cx, cy = min(max(cx, 0.0), out_w - 1.0), min(max(cy, 0.0), out_h - 1.0)
        hm[k] = np.exp(-((ii - cy) ** 2 + (jj - cx) ** 2) / (2.0 * sigma * sigma))
    if clamped:
        logger.debug("clamped %d off-grid keypoint(s) onto the heatmap border", clamped)
    return (hm, clamped) if return_clamped else hm


@dataclass
class Decoded:
    keypoints: np.ndarray  # (K, 3): x, y in input pixels; v = 1
    scores: np.ndarray  # (K,) peak responses
    low_confidence: np.ndarray  # (K,) True where the channel was constant


def _second_peak(flat: np.ndarray, h: int, w: int, first: int, local: bool) -> int:
    masked = flat.copy()
    masked[first] = -np.inf
    if local:
        r, c = divmod(first, w)
        window = np.full((h, w), -np.inf)
        r0, r1, c0, c1 = max(r - 1, 0), min(r + 2, h), max(c - 1, 0), min(c + 2, w)
        window[r0:r1, c0:c1] = masked.reshape(h, w)[r0:r1, c0:c1]
        masked = window.reshape(-1)
    return int(np.argmax(masked))


def decode(hm: np.ndarray, local: bool = False) -> Decoded:
    """Argmax plus a quarter-cell shift toward the second-highest response.

    Ties resolve to the lowest flat index for both peaks.  ``local=True``
    restricts the second peak to the 3x3 neighbourhood of the first.
    """
    hm = np.asarray(hm, dtype=np.float64)
    if hm.ndim != 3:
        raise ShapeError(f"decode expects (K, h, w) heatmaps, got {hm.shape}")
    k, h, w = hm.shape
    out = np.zeros((k, 3))
    scores = np.zeros(k)
    flat_channels = np.zeros(k, dtype=bool)
    for c in range(k):
        flat = hm[c].reshape(-1)
        first = int(np.argmax(flat))
        y1, x1 = divmod(first, w)
        px, py = float(x1), float(y1)
        if h * w > 1:
            second = _second_peak(flat, h, w, first, local)
            y2, x2 = divmod(second, w)
            dx, dy = x2 - x1, y2 - y1
            norm = np.hypot(dx, dy)
            px += 0.25 * dx / norm
            py += 0.25 * dy / norm
        out[c] = (px * STRIDE, py * STRIDE, 1.0)
        scores[c] = flat[first]
        flat_channels[c] = bool(flat.max() == flat.min())
    return Decoded(out, scores, flat_channels)


def flip_permutation(flip_pairs: Sequence[tuple], num_keypoints: int) -> np.ndarray:
    perm = np.arange(num_keypoints)
    seen = set()
    for a, b in flip_pairs:
        if not (0 <= a < num_keypoints and 0 <= b < num_keypoints):
            raise ConfigError(f"flip pair ({a}, {b}) outside keypoint range [0, {num_keypoints})")
        if a in seen or b in seen:
            raise ConfigError(f"flip pairs are not an involution: index repeated in ({a}, {b})")
        seen.update((a, b))
        perm[a], perm[b] = b, a
    return perm


def flip_average(model: Callable[[np.ndarray], np.ndarray], image: np.ndarray,
                 flip_pairs: Sequence[tuple]) -> np.ndarray:
    """Average heatmaps of the image and of its mirror (mirrored back, joints swapped).

    ``model`` maps an ``(n, 3, H, W)`` batch to ``(n, K, h, w)`` heatmaps.
    """
    image = np.asarray(image, dtype=np.float64)
    plain = np.asarray(model(image))
    mirrored = np.asarray(model(image[..., ::-1].copy()))
    perm = flip_permutation(flip_pairs, plain.shape[1])
    unflipped = mirrored[:, perm, :, ::-1]
    return (plain + unflipped) / 2.0
