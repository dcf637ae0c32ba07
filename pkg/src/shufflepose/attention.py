"""Spatial and channel-wise attention gates and the two attention bottlenecks.

Both gates are computed from the feature map they are applied to, so the
order of the two stages changes the result (SCARB vs CSARB).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .layers import BottleneckParams, identity_path, init_bottleneck, kaiming, residual_branch, zeros
from .tensor import Tensor

VARIANTS = ("plain", "scarb", "csarb")


@dataclass
class SpatialAttnParams:
    weight: Tensor  # (1, C, 1, 1)
    bias: Tensor  # (1,)

    @property
    def channels(self) -> int:
        return self.weight.shape[1]


@dataclass
class ChannelAttnParams:
    w1: Tensor  # (C, C)
    b1: Tensor
    w2: Tensor  # (C, C)
    b2: Tensor

    @property
    def channels(self) -> int:
        return self.w1.shape[0]


def init_spatial(rng: np.random.Generator, channels: int) -> SpatialAttnParams:
    return SpatialAttnParams(kaiming(rng, (1, channels, 1, 1), channels), zeros((1,)))


def init_channel(rng: np.random.Generator, channels: int) -> ChannelAttnParams:
    return ChannelAttnParams(
        kaiming(rng, (channels, channels), channels), zeros((channels,)),
        kaiming(rng, (channels, channels), channels), zeros((channels,)),
    )


def zero_spatial(channels: int) -> SpatialAttnParams:
    return SpatialAttnParams(zeros((1, channels, 1, 1)), zeros((1,)))


def zero_channel(channels: int) -> ChannelAttnParams:
    return ChannelAttnParams(zeros((channels, channels)), zeros((channels,)),
                             zeros((channels, channels)), zeros((channels,)))


def spatial_weights(v: Tensor, p: SpatialAttnParams) -> Tensor:
    """Per-position gate of shape (n, 1, h, w), strictly inside (0, 1)."""
    if v.shape[1] != p.channels:
        raise ShapeError(f"spatial_attention: input has {v.shape[1]} channels, params expect {p.channels}")
    return T.sigmoid(T.conv2d(v, p.weight, p.bias))


def spatial_attention(v: Tensor, p: SpatialAttnParams) -> Tensor:
    return T.mul(v, spatial_weights(v, p))


def channel_weights(u: Tensor, p: ChannelAttnParams) -> Tensor:
    """Squeeze (global mean) then excite (FC, ReLU, FC, sigmoid): shape (n, C, 1, 1)."""
    if u.shape[1] != p.channels:
        raise ShapeError(f"channel_attention: input has {u.shape[1]} channels, params expect {p.channels}")
    z = T.global_avg_pool(u)
    h = T.relu(T.fully_connected(z, p.w1, p.b1))
    return T.sigmoid(T.fully_connected(h, p.w2, p.b2))


def channel_attention(u: Tensor, p: ChannelAttnParams) -> Tensor:
    return T.mul(u, channel_weights(u, p))


@dataclass
class AttentionBlockParams:
    """A residual bottleneck plus the gates used by the attention variants."""

    bottleneck: BottleneckParams
    spatial: Optional[SpatialAttnParams] = None
    channel: Optional[ChannelAttnParams] = None


def init_attention_block(rng: np.random.Generator, c_in: int, c_out: int, variant: str) -> AttentionBlockParams:
    """Bottleneck parameters, plus gate parameters unless ``variant`` is plain."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown bottleneck variant {variant!r}; expected one of {VARIANTS}")
    bp = init_bottleneck(rng, c_in, c_out)
    if variant == "plain":
        return AttentionBlockParams(bp)
    return AttentionBlockParams(bp, init_spatial(rng, c_out), init_channel(rng, c_out))


def _gated_bottleneck(x: Tensor, bp: BottleneckParams, gates) -> Tensor:
    shortcut = identity_path(x, bp)
    y = residual_branch(x, bp)
    for gate in gates:
        y = gate(y)
    return T.relu(T.add(shortcut, y))


def scarb(x: Tensor, bp: BottleneckParams, sp: SpatialAttnParams, cp: ChannelAttnParams) -> Tensor:
    return _gated_bottleneck(x, bp, (lambda y: spatial_attention(y, sp), lambda y: channel_attention(y, cp)))


def csarb(x: Tensor, bp: BottleneckParams, sp: SpatialAttnParams, cp: ChannelAttnParams) -> Tensor:
    return _gated_bottleneck(x, bp, (lambda y: channel_attention(y, cp), lambda y: spatial_attention(y, sp)))


def attention_block(x: Tensor, p: AttentionBlockParams, variant: str) -> Tensor:
    """Dispatch on ``variant``; ``plain`` ignores the gates entirely."""
    if variant == "plain":
        return _gated_bottleneck(x, p.bottleneck, ())
    if p.spatial is None or p.channel is None:
        raise ConfigError(f"variant {variant!r} needs attention parameters, block has none")
    if variant == "scarb":
        return scarb(x, p.bottleneck, p.spatial, p.channel)
    if variant == "csarb":
        return csarb(x, p.bottleneck, p.spatial, p.channel)
    raise ConfigError(f"unknown bottleneck variant {variant!r}; expected one of {VARIANTS}")
