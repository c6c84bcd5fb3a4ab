"""Sweep the inner-loop learning rate and report each method's target MAE.

Diagnostic for how strongly the partition strategy matters once the
few-shot adaptation step actually moves the parameters.

    python scripts/inner_lr_sweep.py configs/synthetic.cfg --lrs 0.001,0.01,0.1
"""

import argparse
import dataclasses

from smaml.config import load_config
from smaml.experiment import run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--lrs", default="0.001,0.01,0.1")
    ap.add_argument("--methods", default="smaml,maml_random,smaml_shuffle")
    ap.add_argument("--target-n", type=int, default=None, help="limit target tasks for speed")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    base = load_config(args.config).with_(methods=tuple(args.methods.split(",")), target_N=args.target_n)
    for lr in (float(v) for v in args.lrs.split(",")):
        cfg = base.with_(meta=dataclasses.replace(base.meta, inner_lr=lr))
        out = run_experiment(cfg, args.seed, args.threads)
        unadapted = [r.mae_unadapted for c in out.cells for r in c.records]
        line = "  ".join(f"{r.method}={r.mae_mean:.4f}" for r in out.rows)
        print(f"inner_lr={lr:<6g} {line}  unadapted={sum(unadapted) / len(unadapted):.4f}", flush=True)


if __name__ == "__main__":
    main()
