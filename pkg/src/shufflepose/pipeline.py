"""Training loop, evaluation, inference and the ablation harness."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from . import checkpoint as ckpt
from .codec import COCO_FLIP_PAIRS, decode, encode, flip_average
from .config import RunConfig
from .data import SyntheticSample, affine_matrix, augment, make_dataset, warp_image
from .errors import NumericError
from .network import PoseModel, forward_loss, init_model, model_parameters, predict
from .oks import APSummary, GroundTruth, Prediction, average_precision, box_area, uniform_kappas
from .optim import AdamState, adam_step, lr_schedule
from .records import PersonRecord

logger = logging.getLogger(__name__)

EVAL_SEED_OFFSET = 1000


@dataclass
class LogRow:
    step: int
    global_levels: List[float]
    refine: float
    total: float
    lr: float

    def line(self) -> str:
        vals = " ".join(repr(v) for v in [*self.global_levels, self.refine, self.total, self.lr])
        return f"{self.step} {vals}"


@dataclass
class TrainResult:
    model: PoseModel
    state: AdamState
    rng: np.random.Generator
    log: List[LogRow] = field(default_factory=list)

    @property
    def losses(self) -> List[float]:
        return [r.total for r in self.log]


def batch_arrays(samples: Sequence[SyntheticSample], out_hw: tuple, sigma: float) -> tuple:
    images = np.stack([s.image for s in samples])
    targets = np.stack([encode(s.keypoints, *out_hw, sigma=sigma) for s in samples])
    vis = np.stack([s.keypoints[:, 2] for s in samples])
    return images, targets, vis


def train(cfg: RunConfig, out_dir: Union[str, Path, None] = None, max_steps: Optional[int] = None,
          dataset: Optional[List[SyntheticSample]] = None) -> TrainResult:
    """Adam on the synthetic dataset; one epoch is one pass over it.

    Writes ``loss.log`` and ``checkpoint.ppck`` into ``out_dir`` when given.
    """
    cfg.validate()
    mc, tc = cfg.model, cfg.train
    model = init_model(mc, seed=tc.seed)
    params = model_parameters(model)
    data = dataset if dataset is not None else make_dataset(tc.num_samples, tc.seed, mc.input_h, mc.input_w,
                                                            mc.num_keypoints)
    rng = np.random.default_rng([tc.seed, 1])
    state = AdamState()
    result = TrainResult(model, state, rng)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_file = (out / "loss.log").open("w", encoding="utf-8")
        log_file.write("# step global_l2_level2 global_l2_level3 global_l2_level4 global_l2_level5 "
                       "refine_ohkm total lr\n")
    else:
        log_file = None

    try:
        _run_epochs(model, params, data, cfg, state, rng, result, log_file, out, max_steps)
    finally:
        if log_file is not None:
            log_file.close()
    if out is not None:
        ckpt.save(out / "checkpoint.ppck", ckpt.pack(model, state, rng))
    return result


def _run_epochs(model, params, data, cfg, state, rng, result, log_file, out, max_steps) -> None:
    mc, tc = cfg.model, cfg.train
    for epoch in range(tc.total_epochs):
        lr = lr_schedule(epoch, tc.base_lr, tc.lr_decay, tc.decay_epochs)
        order = rng.permutation(len(data))
        for start in range(0, len(data), tc.batch_size):
            if max_steps is not None and state.step >= max_steps:
                return
            batch = [data[i] for i in order[start:start + tc.batch_size]]
            if tc.augment:
                batch = [augment(s, rng, tc.rotation, (tc.scale_min, tc.scale_max)) for s in batch]
            images, targets, vis = batch_arrays(batch, mc.output_hw, tc.sigma)
            for _, p in params:
                p.grad = None
            total, report = forward_loss(model, images, targets, vis)
            if not math.isfinite(report.total):
                raise NumericError(f"non-finite loss {report.total} at step {state.step + 1}")
            total.backward()
            adam_step(params, state, lr)
            row = LogRow(state.step, report.global_levels, report.refine, report.total, lr)
            result.log.append(row)
            if log_file is not None:
                log_file.write(row.line() + "\n")
        if out is not None and tc.checkpoint_every and (epoch + 1) % tc.checkpoint_every == 0:
            ckpt.save(out / f"checkpoint_epoch{epoch + 1}.ppck", ckpt.pack(model, state, rng))


def load_model(cfg: RunConfig, path: Union[str, Path]) -> PoseModel:
    model = init_model(cfg.model, seed=cfg.train.seed)
    ckpt.unpack(ckpt.load(path), model)
    return model


def _rotate_stack(stack: np.ndarray, theta_deg: float) -> np.ndarray:
    """Rotate every ``(C, H, W)`` map in ``stack`` about its centre."""
    h, w = stack.shape[-2:]
    m = affine_matrix(theta_deg, 1.0, ((w - 1) / 2.0, (h - 1) / 2.0))
    return np.stack([warp_image(item, m) for item in stack])


def heatmaps_for(model: PoseModel, images: np.ndarray, flip: bool = True,
                 rotations: Sequence[float] = ()) -> np.ndarray:
    """Heatmaps averaged over the plain view, the mirror (``flip``) and extra rotated views.

    A rotated view's heatmaps are rotated back before averaging; areas rotated in
    from outside the frame count as zero.
    """
    def run(batch):
        if flip:
            return flip_average(lambda b: predict(model, b), batch, COCO_FLIP_PAIRS)
        return predict(model, batch)

    total = run(images)
    for theta in rotations:
        total = total + _rotate_stack(run(_rotate_stack(images, theta)), -theta)
    return total / (1 + len(rotations))


def infer(model: PoseModel, images: np.ndarray, flip: bool = True, batch_size: int = 8,
          rotations: Sequence[float] = ()) -> tuple:
    """Heatmaps ``(n, K, H/4, W/4)`` and one decoded record per image."""
    chunks = [heatmaps_for(model, images[i:i + batch_size], flip, rotations)
              for i in range(0, len(images), batch_size)]
    hms = np.concatenate(chunks)
    _, _, h, w = images.shape
    records = []
    for i, hm in enumerate(hms):
        d = decode(hm)
        records.append(PersonRecord(i, np.array([0.0, 0.0, float(w), float(h)]), float(d.scores.mean()), d.keypoints))
    return hms, records


def ground_truth_records(samples: Sequence[SyntheticSample]) -> List[PersonRecord]:
    return [PersonRecord(i, s.box, 1.0, s.keypoints) for i, s in enumerate(samples)]


def evaluate_records(preds: Sequence[PersonRecord], gts: Sequence[PersonRecord], kappas=None,
                     area_scale: float = 1.0) -> APSummary:
    num_kp = len(gts[0].keypoints) if gts else (len(preds[0].keypoints) if preds else 0)
    kappas = uniform_kappas(num_kp) if kappas is None else kappas
    p = [Prediction(r.keypoints, r.score, r.image_id) for r in preds]
    g = [GroundTruth(r.keypoints, max(box_area(r.keypoints, area_scale), 1.0), r.image_id) for r in gts]
    return average_precision(p, g, kappas=kappas)


def evaluate(model: PoseModel, cfg: RunConfig, samples: Optional[List[SyntheticSample]] = None) -> tuple:
    """Flip-averaged inference on held-out samples; returns (APSummary, predictions)."""
    mc, tc = cfg.model, cfg.train
    if samples is None:
        samples = make_dataset(tc.eval_samples, tc.seed + EVAL_SEED_OFFSET, mc.input_h, mc.input_w,
                               mc.num_keypoints)
    images = np.stack([s.image for s in samples])
    _, preds = infer(model, images, flip=tc.flip_test, rotations=tc.test_rotations)
    return evaluate_records(preds, ground_truth_records(samples), area_scale=tc.area_scale), preds


# ----------------------------------------------------------------------------
# ablation
# ----------------------------------------------------------------------------

ABLATION_ROWS = (
    ("CPN (baseline)", False, "plain"),
    ("CPN + CSM-4", True, "plain"),
    ("CPN + SCARB", False, "scarb"),
    ("CPN + CSM-4 + SCARB", True, "scarb"),
)


@dataclass
class AblationRow:
    method: str
    csm: bool
    scarb: bool
    summary: APSummary
    final_loss: float


@dataclass
class AblationReport:
    rows: List[AblationRow]

    def text(self) -> str:
        lines = [f"{'Method':<22} {'CSM-4':>5} {'SCARB':>5} {'AP':>7} {'AP50':>7} {'AP75':>7} {'AR':>7} {'loss':>10}"]
        for r in self.rows:
            s = r.summary
            lines.append(
                f"{r.method:<22} {'x' if r.csm else '':>5} {'x' if r.scarb else '':>5} "
                f"{100 * s.ap:7.2f} {100 * s.ap50:7.2f} {100 * s.ap75:7.2f} {100 * s.ar:7.2f} {r.final_loss:10.6f}"
            )
        ordering = sorted(self.rows, key=lambda r: -r.summary.ap)
        lines.append("ordering by AP: " + " > ".join(r.method for r in ordering))
        return "\n".join(lines) + "\n"


def run_ablation(cfg: RunConfig, out_dir: Union[str, Path, None] = None) -> AblationReport:
    """Train and evaluate the four component combinations under one shared config."""
    train_set = make_dataset(cfg.train.num_samples, cfg.train.seed, cfg.model.input_h, cfg.model.input_w)
    eval_set = make_dataset(cfg.train.eval_samples, cfg.train.seed + EVAL_SEED_OFFSET,
                            cfg.model.input_h, cfg.model.input_w)
    rows = []
    for method, use_csm, variant in ABLATION_ROWS:
        run_cfg = RunConfig(dataclasses.replace(cfg.model, use_csm=use_csm, variant=variant, groups=4), cfg.train)
        sub = None if out_dir is None else Path(out_dir) / method.replace(" ", "").replace("+", "_")
        result = train(run_cfg, sub, dataset=train_set)
        summary, _ = evaluate(result.model, run_cfg, eval_set)
        rows.append(AblationRow(method, use_csm, variant == "scarb", summary, result.losses[-1]))
        logger.info("%s: AP %.4f", method, summary.ap)
    report = AblationReport(rows)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "ablation.txt").write_text(report.text(), encoding="utf-8")
    return report
