"""Parameterized building blocks: convolutions, residual bottlenecks, heads.

Parameters live in plain dataclasses of ``Tensor`` fields.  ``named_parameters``
walks any nesting of dataclasses, lists and dicts, so a whole model is just a
larger dataclass.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor


def named_parameters(obj, prefix: str = "") -> Iterator[tuple]:
    """Yield ``(dotted_name, Tensor)`` pairs in a deterministic order."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            yield from named_parameters(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_parameters(item, f"{prefix}.{i}" if prefix else str(i))
    elif isinstance(obj, dict):
        for key in obj:
            yield from named_parameters(obj[key], f"{prefix}.{key}" if prefix else str(key))


def parameters(obj) -> list:
    return [t for _, t in named_parameters(obj)]


def kaiming(rng: np.random.Generator, shape: tuple, fan_in: int) -> Tensor:
    return Tensor(rng.standard_normal(shape) * np.sqrt(2.0 / fan_in), requires_grad=True)


def zeros(shape: tuple) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


@dataclass
class ConvParams:
    weight: Tensor
    bias: Tensor
    stride: int = 1
    pad: int = 0

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]


def init_conv(rng: np.random.Generator, c_in: int, c_out: int, k: int = 1, stride: int = 1,
              pad: Optional[int] = None) -> ConvParams:
    pad = (k - 1) // 2 if pad is None else pad
    return ConvParams(kaiming(rng, (c_out, c_in, k, k), c_in * k * k), zeros((c_out,)), stride, pad)


def identity_conv1x1(channels: int) -> ConvParams:
    w = np.eye(channels).reshape(channels, channels, 1, 1)
    return ConvParams(Tensor(w, requires_grad=True), zeros((channels,)))


def selector_conv1x1(c_in: int, c_out: int, offset: int) -> ConvParams:
    """1x1 conv copying input channels ``offset .. offset + c_out`` to the output."""
    w = np.zeros((c_out, c_in, 1, 1))
    w[np.arange(c_out), offset + np.arange(c_out), 0, 0] = 1.0
    return ConvParams(Tensor(w, requires_grad=True), zeros((c_out,)))


def conv(x: Tensor, p: ConvParams) -> Tensor:
    return T.conv2d(x, p.weight, p.bias, p.stride, p.pad)


def reduce_1x1(x: Tensor, p: ConvParams) -> Tensor:
    if p.weight.shape[2:] != (1, 1):
        raise ShapeError(f"reduce_1x1: expected a 1x1 kernel, got {p.weight.shape}")
    return conv(x, p)


@dataclass
class BottleneckParams:
    reduce: ConvParams
    mid: ConvParams
    expand: ConvParams
    proj: Optional[ConvParams] = None

    @property
    def in_channels(self) -> int:
        return self.reduce.in_channels

    @property
    def out_channels(self) -> int:
        return self.expand.out_channels


def init_bottleneck(rng: np.random.Generator, c_in: int, c_out: int) -> BottleneckParams:
    width = max(c_out // 4, 1)
    return BottleneckParams(
        reduce=init_conv(rng, c_in, width, 1),
        mid=init_conv(rng, width, width, 3),
        expand=init_conv(rng, width, c_out, 1),
        proj=init_conv(rng, c_in, c_out, 1) if c_in != c_out else None,
    )


def residual_branch(x: Tensor, p: BottleneckParams) -> Tensor:
    """The residual mapping: 1x1 reduce, 3x3, 1x1 expand (no final activation)."""
    h = T.relu(conv(x, p.reduce))
    h = T.relu(conv(h, p.mid))
    return conv(h, p.expand)


def identity_path(x: Tensor, p: BottleneckParams) -> Tensor:
    if p.proj is not None:
        return conv(x, p.proj)
    if x.shape[1] != p.out_channels:
        raise ShapeError(
            f"bottleneck: input has {x.shape[1]} channels, block outputs {p.out_channels} and has no projection"
        )
    return x


def residual_bottleneck(x: Tensor, p: BottleneckParams) -> Tensor:
    if x.ndim == 4 and x.shape[1] != p.in_channels:
        raise ShapeError(f"bottleneck: channel axis (1) has extent {x.shape[1]}, block expects {p.in_channels}")
    shortcut = identity_path(x, p)
    return T.relu(T.add(shortcut, residual_branch(x, p)))


@dataclass
class HeadParams:
    conv3: ConvParams
    predict: ConvParams


def init_head(rng: np.random.Generator, c_in: int, num_keypoints: int, predict_std: float = 0.0) -> HeadParams:
    """Kaiming throughout; ``predict_std > 0`` redraws the final 1x1 weights at that std.

    Small final weights start every heatmap near zero, so early gradients point
    at the peaks instead of first undoing large random outputs.
    """
    predict = init_conv(rng, c_in, num_keypoints, 1)
    if predict_std > 0:
        predict.weight.data = rng.normal(0.0, predict_std, predict.weight.shape)
    return HeadParams(init_conv(rng, c_in, c_in, 3), predict)


def head(x: Tensor, p: HeadParams) -> Tensor:
    """3x3 conv + ReLU, then a 1x1 conv to one raw heatmap per keypoint."""
    return conv(T.relu(conv(x, p.conv3)), p.predict)
