"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime or numeric failure. Log
verbosity comes from ``--log-level`` or the ``BCNN_CTN_LOG`` environment
variable.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data as D
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, load_config
from .evaluation import EvaluationError, build_pair_set, full_report, kfold_pair_eval, write_pairs_csv
from .trainer import TrainConfig, TrainState, TrainingError, alpha_sweep, fit_config, train, write_history

logger = logging.getLogger("bcnn_ctn")

EXIT_USAGE, EXIT_RUNTIME = 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 32x32, got {text!r}")
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError("size must be positive")
    return h, w


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _fraction(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"expected a value in [0, 1], got {text}")
    return v


def _alphas(text: str) -> list[float]:
    vals = [float(v) for v in text.split(",") if v.strip()]
    if not vals or any(not 0.0 <= v <= 1.0 for v in vals):
        raise argparse.ArgumentTypeError("alphas must be comma-separated values in [0, 1]")
    return vals


# --------------------------------------------------------------------------
# helpers


def load_splits(data_dir, image_size, spec: D.SplitSpec) -> tuple[D.Dataset, D.Dataset, D.Dataset]:
    """Train/validation/test from ``data_dir``; manifest splits win over ``spec``."""
    ds = D.load_directory(data_dir, image_size)
    manifest = Path(data_dir) / D.MANIFEST
    idx = D.manifest_splits(ds, D.read_manifest(manifest)) if manifest.exists() else None
    if idx is None:
        idx = D.split_indices(ds.labels, spec)
    return tuple(ds.subset(idx.get(name, np.array([], dtype=np.intp))) for name in ("train", "validation", "test"))


def _split_spec(meta: dict, seed: int) -> D.SplitSpec:
    """Split the checkpoint was trained with, when it recorded one."""
    cfg = meta.get("train_config")
    if not cfg:
        return D.SplitSpec(seed=seed)
    tf = float(cfg["train_fraction"])
    return D.SplitSpec(tf, 1 - tf, float(cfg["validation_fraction_of_train"]), int(cfg["seed"]))


def _split_by_name(splits, name):
    return dict(zip(("train", "validation", "test"), splits))[name]


# --------------------------------------------------------------------------
# commands


def cmd_synth(args):
    if args.classes < 2:
        raise UsageError("--classes must be >= 2")
    ds = D.make_synthetic(args.classes, args.per_class, args.size, args.seed, args.noise)
    splits = D.split_indices(ds.labels, D.SplitSpec(seed=args.seed)) if args.per_class >= 3 else None
    D.write_directory(ds, args.out, splits)
    print(f"wrote {len(ds)} images in {ds.num_classes} classes to {args.out}")


def cmd_ingest(args):
    ds = D.load_directory(args.data, args.size)
    if args.balance:
        ds = D.balance_classes(ds, args.balance, np.random.default_rng(args.seed))
    splits = D.split_indices(ds.labels, D.SplitSpec(args.train_fraction, 1 - args.train_fraction,
                                                    args.val_fraction, args.seed))
    D.write_directory(ds, args.out, splits)
    counts = ds.class_counts().tolist()
    print(f"wrote {len(ds)} images ({counts} per class) to {args.out}")


def _config(args) -> TrainConfig:
    cfg = load_config(args.config)
    if getattr(args, "epochs", None):
        p1 = cfg.phase1_epochs
        cfg = replace(cfg, epochs=args.epochs, phase1_epochs=None if p1 is None else min(p1, args.epochs))
    return cfg


def cmd_train(args):
    cfg = _config(args)
    tr, va, _ = load_splits(args.data, cfg.backbone.input_size[1:], cfg.split)
    state = None
    if args.resume:
        state = TrainState.load(args.resume, fit_config(cfg, tr))
        logger.info("resuming from %s at epoch %d", args.resume, state.epoch)
    t0 = time.perf_counter()
    state, history = train(tr, va, cfg, out_dir=args.out, state=state)
    write_history(Path(args.out) / "history.csv", history)
    last = history[-1] if history else {}
    print(f"trained {state.epoch} epochs in {time.perf_counter() - t0:.1f}s; "
          f"val_acc {last.get('val_acc', float('nan')):.4f}; checkpoints in {args.out}")


def cmd_eval(args):
    net, meta, _ = load_checkpoint(args.checkpoint)
    splits = load_splits(args.data, net.config.input_size[1:], _split_spec(meta, args.seed))
    ds = _split_by_name(splits, args.split)
    report = full_report(net, ds, args.out, args.pair_count, args.same_fraction, args.folds, args.seed,
                         meta.get("history"))
    avg = report.average
    print(f"accuracy {avg.accuracy:.4f} sensitivity {avg.sensitivity:.4f} specificity {avg.specificity:.4f}"
          + (f" pair accuracy {report.pairs.mean_accuracy:.4f}" if report.pairs else ""))


def cmd_pairs(args):
    net, meta, _ = load_checkpoint(args.checkpoint)
    splits = load_splits(args.data, net.config.input_size[1:], _split_spec(meta, args.seed))
    ds = _split_by_name(splits, args.split)
    _, emb = net.predict(D.to_signed(ds.images))
    ps = build_pair_set(emb, ds.labels, np.random.default_rng(args.seed), args.count, args.same_fraction)
    result = kfold_pair_eval(ps, args.folds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_pairs_csv(out / "pairs.csv", result)
    with open(out / "pair_folds.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["fold", "threshold", "accuracy"])
        for i, (t, a) in enumerate(zip(result.thresholds, result.fold_accuracies)):
            w.writerow([i, repr(t), repr(a)])
    print(f"{len(ps)} pairs ({int(ps.same.sum())} same-class), {args.folds} folds: "
          f"mean accuracy {result.mean_accuracy:.4f}")


def cmd_sweep(args):
    cfg = _config(args)
    tr, va, te = load_splits(args.data, cfg.backbone.input_size[1:], cfg.split)
    table = alpha_sweep(tr, va, te, cfg, args.alphas, args.out)
    for a, acc in table:
        print(f"alpha {a:.3f}  accuracy {acc:.4f}")


def cmd_gradcheck(args):
    from .gradcheck import TOLERANCE, run_suite
    results = run_suite(args.trials, args.seed, include_network=not args.no_network)
    failed = 0
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<26} worst rel err {r.worst:.2e} ({r.trials} trials)")
        failed += not r.passed
    print(f"{len(results) - failed}/{len(results)} passed (tolerance {TOLERANCE:g})")
    return EXIT_RUNTIME if failed else 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log-level", default=argparse.SUPPRESS)
    p = _Parser(prog="bcnn-ctn", description=__doc__.splitlines()[0])
    p.add_argument("--log-level", default=os.environ.get("BCNN_CTN_LOG", "INFO"))
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add = sub.add_parser

    def add_parser(name, **kw):
        return _add(name, parents=[common], **kw)

    sub.add_parser = add_parser

    s = sub.add_parser("synth", help="write a synthetic textured-blob dataset")
    s.add_argument("--classes", type=int, required=True)
    s.add_argument("--per-class", type=_positive, required=True)
    s.add_argument("--size", type=_size, default=(32, 32))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise", type=float, default=0.05)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", help="resize, balance and split an image directory")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--size", type=_size, default=(32, 32))
    s.add_argument("--balance", type=_positive, default=None, help="images per class after balancing")
    s.add_argument("--train-fraction", type=_fraction, default=0.8)
    s.add_argument("--val-fraction", type=_fraction, default=0.1)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--data", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=_positive, default=None)
    s.add_argument("--resume", default=None, help="checkpoint to continue from")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="classification report, ROC, confusion matrix and pair verification")
    s.add_argument("--data", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--split", choices=("train", "validation", "test"), default="test")
    s.add_argument("--pair-count", type=_positive, default=600)
    s.add_argument("--same-fraction", type=_fraction, default=0.6)
    s.add_argument("--folds", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("pairs", help="k-fold pair verification on embedding distances")
    s.add_argument("--data", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--folds", type=int, default=10)
    s.add_argument("--count", type=_positive, default=600)
    s.add_argument("--same-fraction", type=_fraction, default=0.6)
    s.add_argument("--split", choices=("train", "validation", "test"), default="validation")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_pairs)

    s = sub.add_parser("sweep-alpha", help="train one model per alpha_t and tabulate accuracy")
    s.add_argument("--data", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--alphas", type=_alphas, default=[0.0, 0.25, 0.5, 0.55, 0.75, 1.0])
    s.add_argument("--epochs", type=_positive, default=None)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    s.add_argument("--trials", type=_positive, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--no-network", action="store_true", help="skip the full-network case")
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "folds", 2) < 2:
        parser.error("--folds must be >= 2")
    try:
        return args.func(args) or 0
    except (UsageError, ConfigError) as e:
        print(f"bcnn-ctn {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, EvaluationError, CheckpointError, D.DatasetError, ArithmeticError, OSError,
            ValueError) as e:
        print(f"bcnn-ctn {args.command}: failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
