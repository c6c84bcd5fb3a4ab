"""Differencing ablation: the same grid with differencing=auto and differencing=off.

    python scripts/run_ablation.py configs/synthetic.cfg --methods smaml
"""

import argparse

import numpy as np

from smaml.config import load_config
from smaml.experiment import run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--methods", default="smaml")
    args = ap.parse_args()
    base = load_config(args.config).with_(methods=tuple(args.methods.split(",")))
    print(f"{'method':14s} {'auto':>10s} {'off':>10s}")
    by_mode = {}
    for mode in ("auto", "off"):
        out = run_experiment(base.with_(differencing=mode), args.seed, args.threads)
        by_mode[mode] = {r.method: r for r in out.rows}
    for m in base.methods:
        a, o = by_mode["auto"][m], by_mode["off"][m]
        print(f"{m:14s} {a.mae_mean:10.4f} {o.mae_mean:10.4f}   per-seed auto {np.round(a.per_seed, 4)} off {np.round(o.per_seed, 4)}")


if __name__ == "__main__":
    main()
