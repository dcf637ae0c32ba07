"""Channel Shuffle Module over a four-level feature pyramid.

Levels are keyed 2..5; level ``l`` has stride ``2**l`` relative to the input
image and every level carries the same channel extent D.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .layers import ConvParams, identity_conv1x1, init_conv, reduce_1x1
from .tensor import Tensor

LEVELS = (2, 3, 4, 5)

Pyramid = Dict[int, Tensor]


@dataclass(frozen=True)
class ShuffleSpec:
    groups: int
    channels: int

    def __post_init__(self):
        if self.groups < 1 or self.channels < 1:
            raise ConfigError(f"groups and channels must be positive, got g={self.groups} C={self.channels}")
        if self.channels % self.groups:
            raise ConfigError(f"groups={self.groups} does not divide channels={self.channels}")

    @property
    def group_size(self) -> int:
        return self.channels // self.groups


def shuffle_permutation(spec: ShuffleSpec) -> np.ndarray:
    """Source channel for each destination slot.

    Source ``i`` lands at ``(i mod c) * g + i // c`` where ``c = C / g``; this is
    the flattening of the transposed ``(g, c)`` view of the channel axis.
    """
    g, c = spec.groups, spec.group_size
    src = np.arange(spec.channels)
    perm = np.empty_like(src)
    perm[(src % c) * g + src // c] = src
    return perm


def channel_shuffle(x: Tensor, spec: ShuffleSpec) -> Tensor:
    if x.ndim != 4 or x.shape[1] != spec.channels:
        raise ShapeError(f"channel_shuffle: channel extent {x.shape[1] if x.ndim == 4 else x.shape} "
                         f"!= shuffle channels {spec.channels}")
    return T.permute_channels(x, shuffle_permutation(spec))


def check_pyramid(p: Pyramid) -> int:
    """Validate level keys and halving extents; return the shared channel count."""
    if sorted(p) != list(LEVELS):
        raise ShapeError(f"pyramid must have levels {LEVELS}, got {sorted(p)}")
    n, d, h, w = p[2].shape
    for lvl in LEVELS[1:]:
        k = 2 ** (lvl - 2)
        if h % k or w % k:
            raise ShapeError(f"level-2 extents {h}x{w} are not divisible by {k}, needed for level {lvl}")
        expect = (n, d, h // k, w // k)
        if p[lvl].shape != expect:
            raise ShapeError(f"pyramid level {lvl} has extents {p[lvl].shape}, expected {expect}")
    return d


@dataclass
class CSMParams:
    fuse: List[ConvParams]  # one D -> D 1x1 conv per level, in LEVELS order


def init_csm(rng: np.random.Generator, channels: int) -> CSMParams:
    return CSMParams([init_conv(rng, channels, channels, 1) for _ in LEVELS])


def identity_csm(channels: int) -> CSMParams:
    return CSMParams([identity_conv1x1(channels) for _ in LEVELS])


def shuffled_features(p: Pyramid, spec: ShuffleSpec, params: CSMParams) -> Pyramid:
    """S-Conv-2..5: align, concat, shuffle, split, resample back, fuse."""
    d = check_pyramid(p)
    if spec.channels != 4 * d:
        raise ShapeError(f"csm: shuffle spec covers {spec.channels} channels, pyramid concat has {4 * d}")
    aligned = [T.upsample_nearest(p[lvl], 2 ** (lvl - 2)) for lvl in LEVELS]
    psi = channel_shuffle(T.concat_channels(aligned), spec)
    blocks = T.split_channels(psi, [d] * len(LEVELS))
    out = {}
    for lvl, block, fuse in zip(LEVELS, blocks, params.fuse):
        c_conv = T.downsample_avg(block, 2 ** (lvl - 2))
        out[lvl] = reduce_1x1(c_conv, fuse)
    return out


def csm_forward(p: Pyramid, spec: ShuffleSpec, params: CSMParams) -> Pyramid:
    """Enhanced pyramid: each level is concat(S-Conv, Conv) with 2*D channels."""
    shuffled = shuffled_features(p, spec, params)
    return {lvl: T.concat_channels([shuffled[lvl], p[lvl]]) for lvl in LEVELS}
