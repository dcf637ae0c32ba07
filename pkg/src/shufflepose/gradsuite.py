"""Registry of finite-difference checks covering every differentiable operation.

Each case builds fresh random inputs, wraps the operation in a scalar loss
(a fixed random projection of its output) and hands the leaves to
``check_gradients``.  Inputs that feed a ReLU are kept away from the kink so
that a central difference never straddles it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional

import numpy as np

from . import tensor as T
from .attention import (
    channel_attention, csarb, init_attention_block, init_channel, init_spatial, scarb, spatial_attention,
)
from .codec import encode
from .csm import LEVELS, ShuffleSpec, channel_shuffle, csm_forward, init_csm
from .gradcheck import GradCheckResult, check_gradients, projected_loss
from .layers import head, init_bottleneck, init_head, parameters, residual_bottleneck
from .network import ModelConfig, forward_loss, init_model, l2_loss, model_parameters, ohkm_loss
from .tensor import Tensor


def _leaf(rng: np.random.Generator, shape: tuple, scale: float = 1.0) -> Tensor:
    return Tensor(scale * rng.standard_normal(shape), requires_grad=True)


def _off_kink(rng: np.random.Generator, shape: tuple, gap: float = 0.05) -> Tensor:
    """Normal samples pushed at least ``gap`` away from zero."""
    x = rng.standard_normal(shape)
    return Tensor(np.sign(x) * (np.abs(x) + gap), requires_grad=True)


@dataclass
class GradCase:
    name: str
    build: Callable[[np.random.Generator], tuple]  # -> (loss_fn, tensors, max_per_tensor)


def _conv3x3(rng):
    x, w, b = _leaf(rng, (2, 3, 5, 6)), _leaf(rng, (4, 3, 3, 3)), _leaf(rng, (4,))
    return projected_loss(lambda: T.conv2d(x, w, b, stride=1, pad=1)), [x, w, b], None


def _conv_strided(rng):
    x, w, b = _leaf(rng, (1, 2, 7, 8)), _leaf(rng, (3, 2, 3, 3)), _leaf(rng, (3,))
    return projected_loss(lambda: T.conv2d(x, w, b, stride=2, pad=1)), [x, w, b], None


def _conv1x1(rng):
    x, w, b = _leaf(rng, (2, 5, 3, 4)), _leaf(rng, (3, 5, 1, 1)), _leaf(rng, (3,))
    return projected_loss(lambda: T.conv2d(x, w, b)), [x, w, b], None


def _fully_connected(rng):
    x, w, b = _leaf(rng, (3, 4, 1, 1)), _leaf(rng, (4, 4)), _leaf(rng, (4,))
    return projected_loss(lambda: T.fully_connected(x, w, b)), [x, w, b], None


def _relu(rng):
    x = _off_kink(rng, (2, 3, 4, 4))
    return projected_loss(lambda: T.relu(x)), [x], None


def _sigmoid(rng):
    x = _leaf(rng, (2, 3, 4, 4), 2.0)
    return projected_loss(lambda: T.sigmoid(x)), [x], None


def _global_avg_pool(rng):
    x = _leaf(rng, (2, 3, 4, 5))
    return projected_loss(lambda: T.global_avg_pool(x)), [x], None


def _upsample(rng):
    x = _leaf(rng, (1, 2, 3, 2))
    return projected_loss(lambda: T.upsample_nearest(x, 4)), [x], None


def _downsample(rng):
    x = _leaf(rng, (1, 2, 8, 8))
    return projected_loss(lambda: T.downsample_avg(x, 4)), [x], None


def _concat_split(rng):
    a, b = _leaf(rng, (1, 2, 3, 3)), _leaf(rng, (1, 3, 3, 3))

    def fn():
        parts = T.split_channels(T.concat_channels([a, b]), [1, 4])
        return T.mul(parts[1], parts[1])

    return projected_loss(fn), [a, b], None


def _shuffle(rng):
    x = _leaf(rng, (1, 8, 2, 2))
    return projected_loss(lambda: channel_shuffle(x, ShuffleSpec(2, 8))), [x], None


def _broadcast_channel(rng):
    a, alpha = _leaf(rng, (2, 3, 4, 4)), _leaf(rng, (2, 3, 1, 1))
    return projected_loss(lambda: T.add(T.mul(a, alpha), alpha)), [a, alpha], None


def _broadcast_spatial(rng):
    a, beta = _leaf(rng, (2, 3, 4, 4)), _leaf(rng, (2, 1, 4, 4))
    return projected_loss(lambda: T.sub(T.mul(a, beta), beta)), [a, beta], None


def _spatial_attention(rng):
    v, p = _leaf(rng, (2, 4, 3, 3)), init_spatial(rng, 4)
    p.bias.data[:] = rng.standard_normal(1)
    return projected_loss(lambda: spatial_attention(v, p)), [v, *parameters(p)], None


def _channel_attention(rng):
    u, p = _leaf(rng, (2, 4, 3, 3)), init_channel(rng, 4)
    for b in (p.b1, p.b2):
        b.data[:] = rng.standard_normal(b.shape)
    return projected_loss(lambda: channel_attention(u, p)), [u, *parameters(p)], None


def _bottleneck(rng):
    x, p = _leaf(rng, (1, 4, 5, 5)), init_bottleneck(rng, 4, 8)
    return projected_loss(lambda: residual_bottleneck(x, p)), [x, *parameters(p)], None


def _head(rng):
    x, p = _leaf(rng, (1, 4, 5, 4)), init_head(rng, 4, 3)
    return projected_loss(lambda: head(x, p)), [x, *parameters(p)], None


def _attention_block(variant: str):
    fn = scarb if variant == "scarb" else csarb

    def build(rng):
        x = _leaf(rng, (2, 8, 5, 5))
        p = init_attention_block(rng, 8, 8, variant)
        for t in parameters(p):
            if t.ndim == 1:
                t.data[:] = 0.1 * rng.standard_normal(t.shape)
        loss = projected_loss(lambda: fn(x, p.bottleneck, p.spatial, p.channel))
        return loss, [x, *parameters(p)], None

    return build


def _csm(rng):
    d = 4
    pyramid = {lvl: _leaf(rng, (1, d, 8 // 2 ** (lvl - 2), 8 // 2 ** (lvl - 2))) for lvl in LEVELS}
    params = init_csm(rng, d)
    spec = ShuffleSpec(4, 4 * d)

    def fn():
        out = csm_forward(pyramid, spec, params)
        return T.concat_channels([T.upsample_nearest(out[lvl], 2 ** (lvl - 2)) for lvl in LEVELS])

    return projected_loss(fn), [*pyramid.values(), *parameters(params)], None


def _losses(rng):
    pred = _leaf(rng, (2, 17, 4, 3))
    target = rng.standard_normal(pred.shape)
    vis = np.ones((2, 17))
    vis[1, :5] = 0

    def fn():
        return T.add(l2_loss(pred, target, vis), ohkm_loss(pred, target, vis, 8))

    return fn, [pred], None


def full_model_case(samples_per_tensor: int = 2, batch: int = 2, seed: int = 0) -> Callable:
    """forward_loss of the default desk-scale model (128x96 input, D=16)."""

    def build(rng):
        cfg = ModelConfig()
        model = init_model(cfg, seed=seed)
        for _, t in model_parameters(model):
            if t.ndim == 1:
                t.data[:] = 0.05 * rng.standard_normal(t.shape)
        image = rng.uniform(0.0, 1.0, (batch, 3, cfg.input_h, cfg.input_w))
        kps = np.column_stack([rng.uniform(4, 92, (17, 1)), rng.uniform(4, 124, (17, 1)), np.full((17, 1), 2.0)])
        targets = np.stack([encode(kps, *cfg.output_hw)] * batch)
        vis = np.full((batch, 17), 2.0)
        tensors = [t for _, t in model_parameters(model)]
        return (lambda: forward_loss(model, image, targets, vis)[0]), tensors, samples_per_tensor

    return build


CASES: List[GradCase] = [
    GradCase("conv2d_3x3_pad1", _conv3x3),
    GradCase("conv2d_stride2", _conv_strided),
    GradCase("conv2d_1x1", _conv1x1),
    GradCase("fully_connected", _fully_connected),
    GradCase("relu", _relu),
    GradCase("sigmoid", _sigmoid),
    GradCase("global_avg_pool", _global_avg_pool),
    GradCase("upsample_nearest", _upsample),
    GradCase("downsample_avg", _downsample),
    GradCase("concat_split", _concat_split),
    GradCase("channel_shuffle", _shuffle),
    GradCase("broadcast_channel", _broadcast_channel),
    GradCase("broadcast_spatial", _broadcast_spatial),
    GradCase("spatial_attention", _spatial_attention),
    GradCase("channel_attention", _channel_attention),
    GradCase("residual_bottleneck", _bottleneck),
    GradCase("head", _head),
    GradCase("scarb", _attention_block("scarb")),
    GradCase("csarb", _attention_block("csarb")),
    GradCase("csm_forward", _csm),
    GradCase("l2_and_ohkm_loss", _losses),
    GradCase("forward_loss_128x96_D16", full_model_case()),
]


def case_names() -> List[str]:
    return [c.name for c in CASES]


def run_case(case: GradCase, seed: int = 0) -> GradCheckResult:
    rng = np.random.default_rng(seed)
    loss_fn, tensors, limit = case.build(rng)
    return check_gradients(loss_fn, tensors, case.name, max_per_tensor=limit, rng=rng)


def run_suite(names: Optional[Iterable[str]] = None, seed: int = 0) -> List[GradCheckResult]:
    wanted = None if names is None else set(names)
    by_name: Dict[str, GradCase] = {c.name: c for c in CASES}
    if wanted is not None:
        unknown = wanted - set(by_name)
        if unknown:
            raise KeyError(f"unknown gradient case(s): {sorted(unknown)}")
    return [run_case(c, seed) for c in CASES if wanted is None or c.name in wanted]
