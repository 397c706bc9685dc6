"""Command-line entry points: train, eval, translate, check.

Exit codes: 0 success, 1 failed checks / aborted training / failed eval,
2 usage or configuration errors (bad flags, missing files, bad config keys).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, TrainConfig, load_config, save_config
from .data import load_dataset, load_image_png, load_pair, save_image_png
from .evaluate import emit_diagnostics, evaluate_predictions, predict_disparity, region_masks
from .networks import DIRECTION_A2B, DIRECTION_B2A, build_networks, translate_image
from .optim import TrainingAborted, train
from .tensor import Tensor, no_grad
from .verify import run_checks

USAGE_ERROR, FAILURE, OK = 2, 1, 0


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xstereo",
                                description="Unsupervised cross-spectral stereo matching")
    sub = p.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="train on a manifest of image pairs")
    tr.add_argument("manifest", help="tab-separated lines: left<TAB>right[<TAB>gt]")
    tr.add_argument("--config", default=None, help="config file overriding the defaults")
    tr.add_argument("--seed", type=int, default=None, help="override the config seed")
    tr.add_argument("--out", required=True, help="output directory for checkpoints and logs")
    tr.add_argument("--resume", default=None, help="checkpoint to continue from")
    tr.add_argument("--verbose", action="store_true", help="print one summary line per epoch")

    ev = sub.add_parser("eval", help="evaluate a checkpoint (or the classical oracle) on a manifest")
    ev.add_argument("checkpoint", help="checkpoint path, or 'none' with --oracle")
    ev.add_argument("manifest")
    ev.add_argument("--oracle", action="store_true",
                    help="also (or only) run the block-matching oracle")
    ev.add_argument("--max-disparity", type=int, default=8,
                    help="oracle search range in pixels")
    ev.add_argument("--out", default=None, help="directory for visual diagnostics")

    tl = sub.add_parser("translate", help="re-render an image in the other spectrum")
    tl.add_argument("checkpoint")
    tl.add_argument("image")
    tl.add_argument("direction", choices=[DIRECTION_A2B, DIRECTION_B2A])
    tl.add_argument("--out", default=None, help="output png (default: <image>_<direction>.png)")

    ck = sub.add_parser("check", help="run the verification suites")
    ck.add_argument("subset", nargs="?", default="all",
                    choices=["all", "grad", "invariants", "oracle"])
    return p


def cmd_train(args) -> int:
    cfg = TrainConfig()
    if args.config is not None:
        cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    cfg.validate()

    start_epoch = 0
    global_step = 0
    if args.resume is not None:
        loaded = load_checkpoint(args.resume)
        nets = loaded.nets
        cfg = loaded.cfg if args.config is None else cfg
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        start_epoch = loaded.epoch
        global_step = loaded.global_step
    else:
        nets = build_networks(cfg.network, cfg.input_mode, seed=cfg.seed, use_stn=cfg.use_stn)

    dataset = load_dataset(args.manifest)
    os.makedirs(args.out, exist_ok=True)
    save_config(cfg, os.path.join(args.out, "config.txt"))
    result = train(dataset, nets, cfg, out_dir=args.out,
                   start_epoch=start_epoch, global_step=global_step,
                   quiet=not args.verbose)
    print(f"trained {result.epochs_run} epochs ({result.global_step} iterations); "
          f"outputs in {args.out}")
    return OK


def cmd_eval(args) -> int:
    from .blockmatch import block_match

    pairs = load_dataset(args.manifest)
    with_gt = [p for p in pairs if p.gt_disparity is not None]
    if not with_gt:
        print("eval: no manifest entries carry ground truth", file=sys.stderr)
        return USAGE_ERROR
    if args.checkpoint == "none" and not args.oracle:
        print("eval: checkpoint 'none' requires --oracle", file=sys.stderr)
        return USAGE_ERROR

    gts = [p.gt_disparity.data[0, 0] for p in with_gt]
    masks = [region_masks(g, p.left, p.right) for g, p in zip(gts, with_gt)]

    if args.checkpoint != "none":
        loaded = load_checkpoint(args.checkpoint)
        preds = [predict_disparity(p, loaded.nets, loaded.cfg) for p in with_gt]
        report = evaluate_predictions(preds, gts, masks)
        print("matcher:")
        for line in report.lines():
            print("  " + line)
        if args.out is not None:
            for p in with_gt:
                emit_diagnostics(p, loaded.nets, loaded.cfg, args.out)

    if args.oracle:
        preds, valids = [], []
        for p in with_gt:
            d, v = block_match(p.left.data[0], p.right.data[0],
                               max_disparity=args.max_disparity)
            preds.append(d)
            valids.append(v)
        report = evaluate_predictions(preds, gts, masks, valids)
        print("block-match oracle:")
        for line in report.lines():
            print("  " + line)
    return OK


def cmd_translate(args) -> int:
    loaded = load_checkpoint(args.checkpoint)
    if not loaded.nets.has_stn:
        print("translate: this checkpoint has no translation networks", file=sys.stderr)
        return FAILURE
    img = load_image_png(args.image)
    with no_grad():
        out = translate_image(Tensor(img[None]), loaded.nets, args.direction)
    dest = args.out
    if dest is None:
        stem, _ = os.path.splitext(args.image)
        dest = f"{stem}_{args.direction}.png"
    save_image_png(dest, out.data[0])
    print(f"wrote {dest}")
    return OK


def cmd_check(args) -> int:
    results = run_checks(args.subset)
    failed = 0
    for r in results:
        mark = "PASS" if r.passed else "FAIL"
        print(f"{mark} {r.name}: {r.detail} [{r.seconds:.2f}s]")
        failed += 0 if r.passed else 1
    total = len(results)
    print(f"{total - failed}/{total} checks passed")
    return OK if failed == 0 else FAILURE


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE_ERROR if exc.code not in (0, None) else OK
    try:
        if args.command == "train":
            return cmd_train(args)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "translate":
            return cmd_translate(args)
        if args.command == "check":
            return cmd_check(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return FAILURE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
