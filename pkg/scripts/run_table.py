"""Run the method comparison grid on a config and print the Markdown table.

    python scripts/run_table.py configs/synthetic.cfg --out runs/table --seed 0
"""

import argparse
import time

from smaml.config import load_config
from smaml.data import markdown_table
from smaml.experiment import run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--out", default="runs/table")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--methods", help="comma-separated override, e.g. smaml,maml_random,maml_dtw")
    args = ap.parse_args()
    cfg = load_config(args.config)
    if args.methods:
        cfg = cfg.with_(methods=tuple(m.strip() for m in args.methods.split(",")))
    t0 = time.perf_counter()
    outcome = run_experiment(cfg, args.seed, args.threads, args.out)
    print(markdown_table(outcome.rows))
    print(f"{len(outcome.cells)} cells in {time.perf_counter() - t0:.0f}s; outputs in {args.out}")


if __name__ == "__main__":
    main()
