#!/usr/bin/env python3
"""Desk-scale experiment: synthetic k=4 blobs, joint loss vs softmax only.

Trains with configs/desk.cfg at alpha_t=0.55 and alpha_t=1, then writes an
evaluation report per run plus a one-line summary.

    python3 scripts/desk_run.py --out runs/desk
"""

import argparse
import logging
import time
from dataclasses import replace
from pathlib import Path

from bcnn_ctn.config import load_config
from bcnn_ctn.data import make_synthetic, split, to_signed
from bcnn_ctn.evaluation import embedding_distance_ratio, full_report
from bcnn_ctn.trainer import train

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "desk.cfg"))
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--classes", type=int, default=4)
    ap.add_argument("--per-class", type=int, default=200)
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--alphas", default="0.55,1.0")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = load_config(args.config)
    ds = make_synthetic(args.classes, args.per_class, (args.size, args.size), seed=args.seed)
    tr, va, te = split(ds, cfg.split)
    out = Path(args.out)
    for alpha in (float(a) for a in args.alphas.split(",")):
        run_cfg = replace(cfg, margins=replace(cfg.margins, alpha_t=alpha))
        run_dir = out / f"alpha_{alpha:g}"
        t0 = time.perf_counter()
        state, history = train(tr, va, run_cfg, out_dir=run_dir)
        rep = full_report(state.net, te, run_dir / "eval", history=history)
        _, emb = state.net.predict(to_signed(te.images))
        intra, inter, ratio = embedding_distance_ratio(emb, te.labels)
        print(f"alpha {alpha:g}: val acc {history[-1]['val_acc']:.3f}, test acc {rep.mean_accuracy:.3f}, "
              f"pair acc {rep.pairs.mean_accuracy:.3f}, inter/intra {inter:.3f}/{intra:.3f} = {ratio:.2f}, "
              f"{time.perf_counter() - t0:.0f}s")


if __name__ == "__main__":
    main()
