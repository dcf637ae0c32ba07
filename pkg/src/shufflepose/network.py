"""Model assembly: tiny residual backbone, CSM-enhanced GlobalNet, RefineNet, losses.

Data flow for an ``(n, 3, H, W)`` image batch::

    backbone -> Conv-2..5 (D channels, strides 4..32)
             -> [CSM -> concat(S-Conv, Conv) -> optional 1x1 reducer]
             -> GlobalNet top-down sum, one head per level   (L2 loss each)
             -> RefineNet attention blocks, concat, final block, head  (OHKM loss)

All heatmaps live on the ``(H/4, W/4)`` grid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from . import tensor as T
from .attention import VARIANTS, AttentionBlockParams, attention_block, init_attention_block
from .csm import LEVELS, CSMParams, ShuffleSpec, csm_forward, init_csm
from .errors import ConfigError, ShapeError
from .layers import (
    BottleneckParams, ConvParams, HeadParams, conv, head, init_bottleneck, init_conv, init_head,
    named_parameters, reduce_1x1, residual_bottleneck,
)
from .tensor import Tensor

logger = logging.getLogger(__name__)

OUTPUT_STRIDE = 4


@dataclass
class ModelConfig:
    base_channels: int = 16
    backbone_blocks: int = 1
    num_keypoints: int = 17
    groups: int = 4
    use_csm: bool = True
    csm_reduce: bool = True
    variant: str = "scarb"
    ohkm_k: int = 8
    head_init_std: float = 0.001
    input_h: int = 128
    input_w: int = 96

    def validate(self) -> "ModelConfig":
        if self.input_h % 32 or self.input_w % 32 or self.input_h <= 0 or self.input_w <= 0:
            raise ConfigError(f"input_h/input_w must be positive multiples of 32, got {self.input_h}x{self.input_w}")
        if self.input_h * 3 != self.input_w * 4:
            raise ConfigError(f"input_h:input_w must be 4:3, got {self.input_h}:{self.input_w}")
        if self.base_channels < 1 or self.num_keypoints < 1 or self.backbone_blocks < 0:
            raise ConfigError("base_channels and num_keypoints must be positive, backbone_blocks >= 0")
        if not 1 <= self.ohkm_k <= self.num_keypoints:
            raise ConfigError(f"ohkm_k must lie in [1, num_keypoints={self.num_keypoints}], got {self.ohkm_k}")
        if self.head_init_std < 0:
            raise ConfigError(f"head_init_std must be >= 0, got {self.head_init_std}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.use_csm:
            ShuffleSpec(self.groups, 4 * self.base_channels)
        return self

    @property
    def output_hw(self) -> tuple:
        return self.input_h // OUTPUT_STRIDE, self.input_w // OUTPUT_STRIDE

    @property
    def feature_channels(self) -> int:
        """Channel extent entering the FPN."""
        d = self.base_channels
        return 2 * d if self.use_csm and not self.csm_reduce else d


def refine_block_count(level: int) -> int:
    """Coarser levels get more RefineNet bottlenecks: 0 at level 2 up to 3 at level 5."""
    return level - 2


@dataclass
class StageParams:
    down: Optional[ConvParams]
    blocks: List[BottleneckParams]


@dataclass
class BackboneParams:
    stem: List[ConvParams]
    stages: List[StageParams]
    reduce: List[ConvParams]


@dataclass
class GlobalNetParams:
    csm: Optional[CSMParams]
    csm_reduce: Optional[List[ConvParams]]
    heads: List[HeadParams]


@dataclass
class RefineNetParams:
    levels: List[List[AttentionBlockParams]]
    final: AttentionBlockParams
    head: HeadParams


@dataclass
class PoseModel:
    config: ModelConfig
    backbone: BackboneParams
    globalnet: GlobalNetParams
    refinenet: RefineNetParams


def init_model(cfg: ModelConfig, seed: int = 0) -> PoseModel:
    cfg.validate()
    rng = np.random.default_rng(seed)
    d, k = cfg.base_channels, cfg.num_keypoints

    stem = [init_conv(rng, 3, d, 3, stride=2), init_conv(rng, d, d, 3, stride=2)]
    stages = []
    for i, lvl in enumerate(LEVELS):
        width = d * 2 ** i
        down = None if i == 0 else init_conv(rng, width // 2, width, 3, stride=2)
        stages.append(StageParams(down, [init_bottleneck(rng, width, width) for _ in range(cfg.backbone_blocks)]))
    reduce = [init_conv(rng, d * 2 ** i, d, 1) for i in range(len(LEVELS))]

    f = cfg.feature_channels
    csm = init_csm(rng, d) if cfg.use_csm else None
    csm_red = [init_conv(rng, 2 * d, d, 1) for _ in LEVELS] if cfg.use_csm and cfg.csm_reduce else None
    heads = [init_head(rng, f, k, cfg.head_init_std) for _ in LEVELS]

    levels = [[init_attention_block(rng, f, f, cfg.variant) for _ in range(refine_block_count(lvl))]
              for lvl in LEVELS]
    final = init_attention_block(rng, len(LEVELS) * f, d, cfg.variant)
    return PoseModel(
        cfg,
        BackboneParams(stem, stages, reduce),
        GlobalNetParams(csm, csm_red, heads),
        RefineNetParams(levels, final, init_head(rng, d, k, cfg.head_init_std)),
    )


def model_parameters(model: PoseModel) -> list:
    """``(name, Tensor)`` pairs; the config carries no tensors."""
    return list(named_parameters(model))


# ----------------------------------------------------------------------------
# forward pieces
# ----------------------------------------------------------------------------

def backbone(image: Tensor, model: PoseModel) -> Dict[int, Tensor]:
    """Conv-2..5: residual stages at strides 4..32, each reduced to D channels."""
    cfg = model.config
    if image.ndim != 4 or image.shape[1:] != (3, cfg.input_h, cfg.input_w):
        raise ShapeError(f"image extents {image.shape} do not match (n, 3, {cfg.input_h}, {cfg.input_w})")
    p = model.backbone
    x = image
    for c in p.stem:
        x = T.relu(conv(x, c))
    pyramid = {}
    for lvl, stage, red in zip(LEVELS, p.stages, p.reduce):
        if stage.down is not None:
            x = T.relu(conv(x, stage.down))
        for block in stage.blocks:
            x = residual_bottleneck(x, block)
        pyramid[lvl] = reduce_1x1(x, red)
    return pyramid


def enhance(pyramid: Dict[int, Tensor], model: PoseModel) -> Dict[int, Tensor]:
    cfg, g = model.config, model.globalnet
    if not cfg.use_csm:
        return pyramid
    spec = ShuffleSpec(cfg.groups, 4 * cfg.base_channels)
    out = csm_forward(pyramid, spec, g.csm)
    if g.csm_reduce is not None:
        out = {lvl: reduce_1x1(out[lvl], red) for lvl, red in zip(LEVELS, g.csm_reduce)}
    return out


def globalnet(pyramid: Dict[int, Tensor], model: PoseModel) -> tuple:
    """Top-down FPN sum. Returns (heatmaps per level at H/4, merged features per level)."""
    td = {}
    for lvl in reversed(LEVELS):
        td[lvl] = pyramid[lvl] if lvl == LEVELS[-1] else T.add(pyramid[lvl], T.upsample_nearest(td[lvl + 1], 2))
    heatmaps = {
        lvl: T.upsample_nearest(head(td[lvl], hp), 2 ** (lvl - 2))
        for lvl, hp in zip(LEVELS, model.globalnet.heads)
    }
    return heatmaps, td


def refinenet(td: Dict[int, Tensor], model: PoseModel) -> Tensor:
    variant = model.config.variant
    r = model.refinenet
    merged = []
    for lvl, blocks in zip(LEVELS, r.levels):
        x = td[lvl]
        for block in blocks:
            x = attention_block(x, block, variant)
        merged.append(T.upsample_nearest(x, 2 ** (lvl - 2)))
    x = attention_block(T.concat_channels(merged), r.final, variant)
    return head(x, r.head)


@dataclass
class ForwardOutput:
    global_heatmaps: Dict[int, Tensor]
    refined: Tensor


def forward(model: PoseModel, image: Tensor) -> ForwardOutput:
    pyramid = enhance(backbone(image, model), model)
    heatmaps, td = globalnet(pyramid, model)
    return ForwardOutput(heatmaps, refinenet(td, model))


def predict(model: PoseModel, images: np.ndarray) -> np.ndarray:
    """Refined heatmaps as a plain array, without recording a graph."""
    with T.no_grad():
        return forward(model, Tensor(images)).refined.data


# ----------------------------------------------------------------------------
# losses
# ----------------------------------------------------------------------------

def keypoint_mse(pred: Tensor, target) -> Tensor:
    """Per-keypoint mean squared error, shape (n, K, 1, 1)."""
    target = T.as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"loss: prediction {pred.shape} vs target {target.shape}")
    d = T.sub(pred, target)
    return T.global_avg_pool(T.mul(d, d))


def _selection(values: np.ndarray, visible: np.ndarray, k: Optional[int]) -> list:
    """Visible indices ordered by descending loss (stable), truncated to ``k``."""
    idx = np.flatnonzero(visible)
    order = idx[np.argsort(-values[idx], kind="stable")]
    return list(order if k is None else order[:k])


def selected_mean(per_keypoint: Tensor, visibility: np.ndarray, k: Optional[int] = None) -> Tensor:
    """Batch mean of per-sample means over the ``k`` hardest visible keypoints.

    Sums run over the selected losses in descending order, so ``k = K`` and the
    plain visible mean share identical arithmetic.  Samples with no visible
    keypoint contribute zero.
    """
    n, kp = per_keypoint.shape[:2]
    vals = per_keypoint.data.reshape(n, kp)
    vis = np.asarray(visibility).reshape(n, kp) > 0
    weights = np.zeros((n, kp))
    total, empty = 0.0, 0
    for i in range(n):
        chosen = _selection(vals[i], vis[i], k)
        if not chosen:
            empty += 1
            continue
        s = 0.0
        for j in chosen:
            s += vals[i, j]
        total += s / len(chosen)
        weights[i, chosen] = 1.0 / (len(chosen) * n)
    if empty:
        logger.warning("%d sample(s) without visible keypoints contribute zero loss", empty)
    w4 = weights.reshape(per_keypoint.shape)
    return T.record(np.asarray(total / n), (per_keypoint,), lambda g: (g * w4,), "selected_mean")


def l2_loss(pred: Tensor, target, visibility: np.ndarray) -> Tensor:
    return selected_mean(keypoint_mse(pred, target), visibility)


def ohkm_loss(pred: Tensor, target, visibility: np.ndarray, k: int) -> Tensor:
    if k > pred.shape[1] or k < 1:
        raise ConfigError(f"ohkm k={k} outside [1, K={pred.shape[1]}]")
    return selected_mean(keypoint_mse(pred, target), visibility, k)


def count_empty(visibility: np.ndarray) -> int:
    return int((~(np.asarray(visibility) > 0).any(axis=1)).sum())


@dataclass
class LossReport:
    global_levels: List[float]
    refine: float
    total: float
    empty_samples: int = 0


def forward_loss(model: PoseModel, image, targets: np.ndarray, visibility: np.ndarray) -> tuple:
    """Return ``(total_loss_tensor, LossReport)``.

    total = mean of the four GlobalNet L2 losses + RefineNet OHKM loss.
    """
    out = forward(model, T.as_tensor(image))
    target = Tensor(targets)
    level_losses = [l2_loss(out.global_heatmaps[lvl], target, visibility) for lvl in LEVELS]
    refine = ohkm_loss(out.refined, target, visibility, model.config.ohkm_k)
    g = level_losses[0]
    for extra in level_losses[1:]:
        g = T.add(g, extra)
    total = T.add(T.scale(g, 1.0 / len(LEVELS)), refine)
    report = LossReport([t.item() for t in level_losses], refine.item(), total.item(), count_empty(visibility))
    return total, report
