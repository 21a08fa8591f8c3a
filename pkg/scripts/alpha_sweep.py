#!/usr/bin/env python3
"""Test accuracy as a function of alpha_t on the synthetic set.

    python3 scripts/alpha_sweep.py --out runs/sweep --alphas 0,0.25,0.5,0.55,0.75,1
"""

import argparse
import logging
from pathlib import Path

from bcnn_ctn.config import load_config
from bcnn_ctn.data import make_synthetic, split
from bcnn_ctn.trainer import alpha_sweep

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "desk.cfg"))
    ap.add_argument("--out", default="runs/sweep")
    ap.add_argument("--alphas", default="0,0.25,0.5,0.55,0.75,1")
    ap.add_argument("--classes", type=int, default=4)
    ap.add_argument("--per-class", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = load_config(args.config)
    size = cfg.backbone.input_size[1:]
    tr, va, te = split(make_synthetic(args.classes, args.per_class, size, seed=args.seed), cfg.split)
    for a, acc in alpha_sweep(tr, va, te, cfg, [float(v) for v in args.alphas.split(",")], args.out):
        print(f"alpha {a:.2f}  test accuracy {acc:.4f}")


if __name__ == "__main__":
    main()
