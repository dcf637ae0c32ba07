"""Command-line entry points.

Exit codes: 0 success, 2 configuration error, 3 data error (unreadable or
corrupt files), 4 numeric failure (NaN/inf, failed gradient check).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import gradsuite
from .attention import VARIANTS
from .config import RunConfig, apply_overrides, dump_config, load_config
from .csm import ShuffleSpec, shuffle_permutation
from .data import make_dataset
from .errors import ConfigError, DataError, PoseError
from .pipeline import (
    EVAL_SEED_OFFSET, evaluate, evaluate_records, ground_truth_records, infer, load_model, run_ablation, train,
)
from .records import read_records, write_records

logger = logging.getLogger("shufflepose")


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "groups", None) is not None:
        overrides["groups"] = args.groups
    if getattr(args, "variant", None) is not None:
        overrides["variant"] = args.variant
    return apply_overrides(cfg, overrides) if overrides else cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(args)
    (out / "config.txt").write_text(dump_config(cfg), encoding="utf-8")
    if args.ablation:
        report = run_ablation(cfg, out)
        print(report.text(), end="")
        return 0
    result = train(cfg, out, max_steps=args.steps)
    print(f"steps={len(result.log)} initial_loss={result.losses[0]!r} final_loss={result.losses[-1]!r}")
    print(f"wrote {out / 'loss.log'} and {out / 'checkpoint.ppck'}")
    return 0


def cmd_eval(args) -> int:
    if args.predictions or args.annotations:
        if not (args.predictions and args.annotations):
            raise ConfigError("--predictions and --annotations must be given together")
        cfg = load_config(args.config)
        summary = evaluate_records(read_records(args.predictions), read_records(args.annotations),
                                   area_scale=cfg.train.area_scale)
    else:
        if args.checkpoint is None:
            raise ConfigError("eval needs --checkpoint (or --predictions with --annotations)")
        cfg = _run_config(args)
        summary, preds = evaluate(load_model(cfg, args.checkpoint), cfg)
        if args.out:
            write_records(_out_dir(args) / "predictions.txt", preds)
    text = summary.text()
    print(text, end="")
    if args.out:
        (_out_dir(args) / "report.txt").write_text(text, encoding="utf-8")
    return 0


def cmd_infer(args) -> int:
    cfg = _run_config(args)
    if args.checkpoint is None:
        raise ConfigError("infer needs --checkpoint")
    model = load_model(cfg, args.checkpoint)
    if args.images:
        try:
            images = np.load(args.images)
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read images {args.images}: {exc}") from None
    else:
        samples = make_dataset(cfg.train.eval_samples, cfg.train.seed + EVAL_SEED_OFFSET,
                               cfg.model.input_h, cfg.model.input_w)
        images = np.stack([s.image for s in samples])
    hms, records = infer(model, images, flip=cfg.train.flip_test,
                          rotations=cfg.train.test_rotations)
    out = _out_dir(args)
    np.save(out / "heatmaps.npy", hms)
    write_records(out / "keypoints.txt", records)
    print(f"heatmaps {hms.shape} -> {out / 'heatmaps.npy'}; {len(records)} records -> {out / 'keypoints.txt'}")
    return 0


def cmd_gradcheck(args) -> int:
    results = gradsuite.run_suite(args.case or None, seed=args.seed or 0)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} gradient check(s) failed: {', '.join(failed)}")
        return 4
    return 0


def cmd_shuffle_demo(args) -> int:
    groups = 4 if args.groups is None else args.groups
    spec = ShuffleSpec(groups, args.channels)
    perm = shuffle_permutation(spec)
    print(f"C={spec.channels} g={spec.groups} c={spec.group_size}")
    print("destination <- source:")
    print(" ".join(str(int(p)) for p in perm))
    return 0


def cmd_make_data(args) -> int:
    cfg = _run_config(args)
    n = args.count if args.count is not None else cfg.train.num_samples
    samples = make_dataset(n, cfg.train.seed, cfg.model.input_h, cfg.model.input_w, cfg.model.num_keypoints)
    out = _out_dir(args)
    np.save(out / "images.npy", np.stack([s.image for s in samples]))
    write_records(out / "annotations.txt", ground_truth_records(samples))
    print(f"{n} samples -> {out / 'images.npy'}, {out / 'annotations.txt'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shufflepose", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False, out=True):
        p.add_argument("--config", type=Path, help="key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--groups", type=int, help="channel shuffle groups")
        p.add_argument("--variant", choices=VARIANTS)
        if checkpoint:
            p.add_argument("--checkpoint", type=Path)
        if out:
            p.add_argument("--out", type=Path, required=out == "required")

    p = sub.add_parser("train", help="train a model, write loss.log and checkpoint.ppck")
    common(p, out="required")
    p.add_argument("--steps", type=int, help="stop after this many optimizer steps")
    p.add_argument("--ablation", action="store_true", help="train and compare the four component combinations")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="OKS AP/AR of a checkpoint or of a prediction file")
    common(p, checkpoint=True)
    p.add_argument("--predictions", type=Path)
    p.add_argument("--annotations", type=Path)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="dump heatmaps and decoded keypoints")
    common(p, checkpoint=True, out="required")
    p.add_argument("--images", type=Path, help=".npy array of (n, 3, H, W) images")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="run the finite-difference suite")
    p.add_argument("--seed", type=int)
    p.add_argument("--case", action="append", choices=gradsuite.case_names())
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("shuffle-demo", help="print the channel shuffle permutation")
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--groups", type=int)
    p.set_defaults(func=cmd_shuffle_demo)

    p = sub.add_parser("make-data", help="write a synthetic dataset")
    common(p, out="required")
    p.add_argument("--count", type=int)
    p.set_defaults(func=cmd_make_data)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except PoseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
