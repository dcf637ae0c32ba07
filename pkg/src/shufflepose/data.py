"""Synthetic stick-figure person crops and rotation/scale augmentation.

The generator stands in for a real keypoint dataset: each sample is a
rendered 3-channel image of a randomly posed 17-joint figure (COCO joint
order) together with its joint coordinates and person box.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List

import numpy as np
from scipy import ndimage

from .codec import COCO_KEYPOINTS
from .errors import ConfigError

NUM_JOINTS = len(COCO_KEYPOINTS)

# (joint a, joint b, colour index): 0 centre, 1 left side, 2 right side
LIMBS = (
    (0, 1, 0), (0, 2, 0), (1, 3, 1), (2, 4, 2),
    (5, 6, 0), (5, 7, 1), (7, 9, 1), (6, 8, 2), (8, 10, 2),
    (5, 11, 1), (6, 12, 2), (11, 12, 0),
    (11, 13, 1), (13, 15, 1), (12, 14, 2), (14, 16, 2),
)
COLOURS = np.array([[0.9, 0.9, 0.2], [0.9, 0.2, 0.2], [0.2, 0.4, 0.9]])


@dataclass
class SyntheticSample:
    image: np.ndarray  # (3, H, W)
    keypoints: np.ndarray  # (K, 3)
    box: np.ndarray  # (x, y, w, h)
    pose: Dict[str, float] = field(default_factory=dict)


def _dir(angle: float) -> np.ndarray:
    """Unit vector for an angle measured clockwise from image-up."""
    return np.array([np.sin(angle), -np.cos(angle)])


def _perp(angle: float) -> np.ndarray:
    """Unit vector pointing to image-right of direction ``angle``."""
    return np.array([np.cos(angle), np.sin(angle)])


def sample_pose(rng: np.random.Generator) -> Dict[str, float]:
    """Latent skeleton parameters in a unit frame (hip centre at the origin)."""
    u = rng.uniform
    return {
        "torso": u(-0.3, 0.3), "torso_len": u(0.9, 1.1),
        "shoulder_w": u(0.28, 0.36), "hip_w": u(0.18, 0.24),
        "head": u(-0.4, 0.4), "neck_len": u(0.35, 0.45),
        "eye_up": u(0.06, 0.1), "eye_w": u(0.06, 0.09), "ear_w": u(0.13, 0.17),
        "l_upper": u(1.8, 3.6), "r_upper": u(-3.6, -1.8), "l_fore": u(1.2, 4.2), "r_fore": u(-4.2, -1.2),
        "upper_len": u(0.5, 0.65), "fore_len": u(0.45, 0.6),
        "l_thigh": u(2.8, 3.3), "r_thigh": u(-3.3, -2.8), "l_shin": u(2.7, 3.5), "r_shin": u(-3.5, -2.7),
        "thigh_len": u(0.75, 0.9), "shin_len": u(0.7, 0.85),
    }


def forward_kinematics(pose: Dict[str, float]) -> np.ndarray:
    """Joint positions ``(17, 2)`` in the unit frame, COCO joint order."""
    j = np.zeros((NUM_JOINTS, 2))
    torso = pose["torso"]
    neck = pose["torso_len"] * _dir(torso)
    head_angle = torso + pose["head"]
    nose = neck + pose["neck_len"] * _dir(head_angle)
    j[0] = nose
    eye = nose + pose["eye_up"] * _dir(head_angle)
    j[1] = eye + pose["eye_w"] * _perp(head_angle)
    j[2] = eye - pose["eye_w"] * _perp(head_angle)
    j[3] = nose + pose["ear_w"] * _perp(head_angle)
    j[4] = nose - pose["ear_w"] * _perp(head_angle)
    j[5] = neck + pose["shoulder_w"] * _perp(torso)
    j[6] = neck - pose["shoulder_w"] * _perp(torso)
    j[7] = j[5] + pose["upper_len"] * _dir(pose["l_upper"])
    j[8] = j[6] + pose["upper_len"] * _dir(pose["r_upper"])
    j[9] = j[7] + pose["fore_len"] * _dir(pose["l_fore"])
    j[10] = j[8] + pose["fore_len"] * _dir(pose["r_fore"])
    j[11] = pose["hip_w"] * _perp(torso)
    j[12] = -pose["hip_w"] * _perp(torso)
    j[13] = j[11] + pose["thigh_len"] * _dir(pose["l_thigh"])
    j[14] = j[12] + pose["thigh_len"] * _dir(pose["r_thigh"])
    j[15] = j[13] + pose["shin_len"] * _dir(pose["l_shin"])
    j[16] = j[14] + pose["shin_len"] * _dir(pose["r_shin"])
    return j


def place(unit_joints: np.ndarray, pose: Dict[str, float]) -> np.ndarray:
    return np.array([pose["offset_x"], pose["offset_y"]]) + pose["scale"] * unit_joints


def _segment_coverage(h: int, w: int, a: np.ndarray, b: np.ndarray, radius: float) -> np.ndarray:
    """Anti-aliased coverage of a thick segment: 1 inside, linear falloff over one pixel."""
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    ab = b - a
    denom = float(ab @ ab)
    t = np.zeros_like(xs) if denom == 0 else np.clip(((xs - a[0]) * ab[0] + (ys - a[1]) * ab[1]) / denom, 0, 1)
    dist = np.hypot(xs - (a[0] + t * ab[0]), ys - (a[1] + t * ab[1]))
    return np.clip(radius + 0.5 - dist, 0.0, 1.0)


def render(h: int, w: int, joints: np.ndarray, visibility: np.ndarray, rng: np.random.Generator,
           thickness: float = 1.5) -> np.ndarray:
    img = np.clip(0.3 + 0.08 * rng.standard_normal((3, h, w)), 0.0, 1.0)
    for a, b, colour in LIMBS:
        if visibility[a] < 2 or visibility[b] < 2:
            continue
        cov = _segment_coverage(h, w, joints[a], joints[b], thickness)
        img = img * (1 - cov) + COLOURS[colour][:, None, None] * cov
    for k in range(len(joints)):
        if visibility[k] == 2:
            cov = _segment_coverage(h, w, joints[k], joints[k], thickness + 1.0)
            img = img * (1 - cov) + np.ones((3, 1, 1)) * cov
    return img


def make_sample(rng: np.random.Generator, h: int, w: int, occlusion: float = 0.1,
                margin: float = 6.0) -> SyntheticSample:
    pose = sample_pose(rng)
    unit = forward_kinematics(pose)
    lo, hi = unit.min(axis=0), unit.max(axis=0)
    extent = hi - lo
    fit = min((w - 2 * margin) / extent[0], (h - 2 * margin) / extent[1])
    pose["scale"] = fit * rng.uniform(0.75, 1.0)
    size = extent * pose["scale"]
    pose["offset_x"] = rng.uniform(margin, w - margin - size[0]) - lo[0] * pose["scale"]
    pose["offset_y"] = rng.uniform(margin, h - margin - size[1]) - lo[1] * pose["scale"]
    joints = place(unit, pose)
    vis = np.where(rng.uniform(size=NUM_JOINTS) < occlusion, 1, 2)
    image = render(h, w, joints, vis, rng)
    kps = np.column_stack([joints, vis.astype(np.float64)])
    return SyntheticSample(image, kps, keypoint_box(kps, w, h), pose)


def keypoint_box(kps: np.ndarray, w: int, h: int, pad: float = 4.0) -> np.ndarray:
    """Tight box around visible joints, padded and clipped to the image."""
    vis = kps[kps[:, 2] > 0]
    if len(vis) == 0:
        return np.array([0.0, 0.0, float(w), float(h)])
    x0, y0 = np.maximum(vis[:, :2].min(axis=0) - pad, 0.0)
    x1, y1 = np.minimum(vis[:, :2].max(axis=0) + pad, [w - 1.0, h - 1.0])
    return np.array([x0, y0, x1 - x0, y1 - y0])


def make_dataset(n: int, seed: int, input_h: int = 128, input_w: int = 96,
                 num_keypoints: int = NUM_JOINTS) -> List[SyntheticSample]:
    """``n`` samples, identical for identical ``(n, seed, extents)``."""
    if n < 1:
        raise ConfigError(f"dataset size must be >= 1, got {n}")
    if num_keypoints != NUM_JOINTS:
        raise ConfigError(f"the stick-figure generator produces {NUM_JOINTS} joints, config asks for {num_keypoints}")
    rng = np.random.default_rng(seed)
    return [make_sample(rng, input_h, input_w) for _ in range(n)]


# ----------------------------------------------------------------------------
# augmentation
# ----------------------------------------------------------------------------

def affine_matrix(theta_deg: float, scale: float, center) -> np.ndarray:
    """2x3 map ``p -> c + s R(theta) (p - c)`` acting on (x, y) columns."""
    t = np.deg2rad(theta_deg)
    rot = scale * np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
    c = np.asarray(center, dtype=np.float64)
    return np.column_stack([rot, c - rot @ c])


def transform_points(m: np.ndarray, xy: np.ndarray) -> np.ndarray:
    return xy @ m[:, :2].T + m[:, 2]


def warp_image(image: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Resample ``image`` so that input pixel p lands at ``m p`` (bilinear, zero fill)."""
    inv = np.linalg.inv(m[:, :2])
    # scipy works in (row, col) = (y, x) order and maps output -> input coordinates.
    swap = np.array([[0, 1], [1, 0]])
    matrix = swap @ inv @ swap
    offset = swap @ (-inv @ m[:, 2])
    return np.stack([ndimage.affine_transform(ch, matrix, offset=offset, order=1, mode="constant", cval=0.0)
                     for ch in image])


def apply_affine(sample: SyntheticSample, theta_deg: float, scale: float) -> SyntheticSample:
    """Rotate/scale about the box centre; joints leaving the image become invisible."""
    x, y, bw, bh = sample.box
    m = affine_matrix(theta_deg, scale, (x + bw / 2.0, y + bh / 2.0))
    _, h, w = sample.image.shape
    kps = sample.keypoints.copy()
    kps[:, :2] = transform_points(m, kps[:, :2])
    outside = (kps[:, 0] < 0) | (kps[:, 0] > w - 1) | (kps[:, 1] < 0) | (kps[:, 1] > h - 1)
    kps[outside, 2] = 0
    if theta_deg == 0 and scale == 1:
        image = sample.image.copy()
    else:
        image = warp_image(sample.image, m)
    return replace(sample, image=image, keypoints=kps, box=keypoint_box(kps, w, h))


def augment(sample: SyntheticSample, rng: np.random.Generator, rotation: float = 40.0,
            scale_range: tuple = (0.7, 1.3)) -> SyntheticSample:
    theta = rng.uniform(-rotation, rotation)
    s = rng.uniform(*scale_range)
    return apply_affine(sample, theta, s)
