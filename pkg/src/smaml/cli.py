"""Command-line front end.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import experiment as ex
from .config import METHODS, ConfigError, load_config, parse_kv, synth_spec_from_kv
from .data import DataError, generate_synthetic, write_csv, write_ground_truth
from .gradcheck import TOLERANCE, run_gradcheck
from .meta import KMismatchError, meta_test
from .model import ModelParams
from .partition import PartitionError
from .series import Series, SeriesError

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("smaml")


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get("SMAML_OUT") or "smaml_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _first_cell(cfg, args):
    method = args.method or cfg.methods[0]
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    return method, args.N or cfg.N[0], args.K or cfg.K[0], args.input_len or cfg.input_len[0]


def cmd_prepare(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args)
    reg = ex.load_registry(cfg)
    data = ex.prepare_registry(reg, cfg)
    for bucket in (data.source, data.target):
        for name, ps in bucket.items():
            write_csv(Series(ps.transformed, name=name), out / f"{name}.transformed.csv")
            (out / f"{name}.stack.json").write_text(json.dumps(ps.stack.to_dict(), indent=1) + "\n", encoding="utf-8")
    report = {"fingerprint": data.fingerprint, "series": [r.to_dict() for r in data.reports]}
    (out / "prepare_report.json").write_text(json.dumps(report, indent=1) + "\n", encoding="utf-8")
    for r in data.reports:
        print(f"{r.name}: d={r.diff_order} adf={r.adf_statistic} stationary={r.adf_stationary} "
              f"range=[{r.norm_min:.6g}, {r.norm_max:.6g}]")
    return EXIT_OK


def cmd_partition(args) -> int:
    cfg = load_config(args.config)
    method, N, K, L = _first_cell(cfg, args)
    seed = ex.cell_seed(args.seed, method, N, K, args.seed_index)
    data = ex._method_data(cfg, method, {})
    tasks, _ = ex.build_cell_tasks(cfg, method, N, K, L, seed, data)
    out = _out_dir(args) / f"tasks_{method}_N{N}_K{K}.jsonl"
    with out.open("w", encoding="utf-8") as fh:
        for rec in tasks.to_records():
            fh.write(json.dumps(rec) + "\n")
    print(f"wrote {len(tasks)} tasks to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    method, N, K, L = _first_cell(cfg, args)
    cache: dict = {}
    res = ex.run_cell(cfg, method, N, K, L, args.seed_index, args.seed, cache, keep_params=True)
    out = _out_dir(args)
    stem = out / f"model_{method}_N{N}_K{K}_L{L}_s{args.seed_index}"
    res.params.save(stem.with_suffix(".bin"))
    data = ex._method_data(cfg, method, cache)
    sidecar = {
        "method": method, "N": N, "K": K, "input_len": L, "seed_index": args.seed_index,
        "master_seed": args.seed, "cell_seed": res.seed, "hidden_size": cfg.hidden_size,
        "meta_config": asdict(cfg.meta), "dataset_fingerprint": data.fingerprint,
        "es_alpha": cfg.alpha if method == "esmaml" else None,
    }
    stem.with_suffix(".json").write_text(json.dumps(sidecar, indent=1) + "\n", encoding="utf-8")
    print(f"saved {stem.with_suffix('.bin')}; target MAE {res.mae:.6g}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    ckpt = Path(args.checkpoint)
    meta = json.loads(ckpt.with_suffix(".json").read_text(encoding="utf-8"))
    K = args.K or meta["K"]
    if K != meta["K"]:
        raise KMismatchError(f"evaluation K={K} differs from meta-training K={meta['K']}")
    params = ModelParams.load(ckpt)
    method, L = meta["method"], meta["input_len"]
    data = ex._method_data(cfg, method, {})
    if data.fingerprint != meta["dataset_fingerprint"]:
        log.warning("dataset fingerprint differs from the checkpoint's training data")
    _, target_tasks = ex.build_cell_tasks(cfg, method, meta["N"], K, L, meta["cell_seed"], data)
    records = meta_test(params, target_tasks, data.target, cfg.meta, meta["seed_index"], K=meta["K"])
    out = _out_dir(args) / f"eval_{ckpt.stem}.csv"
    with out.open("w", encoding="utf-8") as fh:
        fh.write("task_id,mae_original_units,mae_transformed,mae_unadapted\n")
        for r in records:
            fh.write(f"{r.task_id},{float(r.mae_original_units)!r},{float(r.mae_transformed)!r},{float(r.mae_unadapted)!r}\n")
    mean = sum(r.mae_original_units for r in records) / len(records)
    print(f"{len(records)} target tasks, mean MAE {mean:.6g} -> {out}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args)
    outcome = ex.run_experiment(cfg, args.seed, args.threads, out)
    for r in outcome.rows:
        flag = "" if r.complete else "  (incomplete)"
        print(f"{r.dataset:12s} {r.method:14s} N={r.N:<4d} K={r.K:<3d} L={r.input_len:<3d} MAE={r.mae_mean:.3f}{flag}")
    return EXIT_OK if outcome.ok else EXIT_RUNTIME


def cmd_synth(args) -> int:
    path = Path(args.spec)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read spec {path}: {exc.strerror}") from exc
    spec = synth_spec_from_kv(parse_kv(text))
    if args.seed is not None:
        spec = type(spec)(**{**spec.__dict__, "seed": args.seed})
    series, truth = generate_synthetic(spec)
    out = _out_dir(args)
    csv_path = write_csv(series, out / f"{path.stem}.csv")
    write_ground_truth(truth, out / f"{path.stem}.truth.json")
    print(f"wrote {csv_path} ({len(series)} rows)")
    return EXIT_OK


def cmd_gradcheck(args, cases=None) -> int:
    results = run_gradcheck(seed=args.seed, cases=cases)
    failed = [r for r in results if not r.passed]
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.op:12s} shapes={r.n_shapes} max_rel_err={r.max_rel_error:.3e} {status}")
    if failed:
        print(f"gradcheck failed (tolerance {TOLERANCE:g}): {', '.join(r.op for r in failed)}")
        return EXIT_RUNTIME
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smaml", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (key = value)")
    common.add_argument("--seed", type=int, default=0, help="master seed")
    common.add_argument("--threads", type=int, default=1, help="parallel grid cells")
    common.add_argument("--out", help="output directory (default $SMAML_OUT or ./smaml_out)")
    common.add_argument("-v", "--verbose", action="store_true")
    cell = argparse.ArgumentParser(add_help=False)
    cell.add_argument("--method", choices=sorted(METHODS))
    cell.add_argument("--N", type=int)
    cell.add_argument("--K", type=int)
    cell.add_argument("--input-len", dest="input_len", type=int)
    cell.add_argument("--seed-index", dest="seed_index", type=int, default=0)

    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("prepare", parents=[common], help="ADF test, difference and normalize").set_defaults(fn=cmd_prepare)
    sub.add_parser("partition", parents=[common, cell], help="dump a task set as JSON lines").set_defaults(fn=cmd_partition)
    sub.add_parser("train", parents=[common, cell], help="meta-train one grid cell").set_defaults(fn=cmd_train)
    ev = sub.add_parser("evaluate", parents=[common, cell], help="meta-test a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.set_defaults(fn=cmd_evaluate)
    sub.add_parser("experiment", parents=[common], help="run the full grid").set_defaults(fn=cmd_experiment)
    sy = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    sy.add_argument("--spec", required=True)
    sy.set_defaults(fn=cmd_synth, seed=None)
    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks").set_defaults(fn=cmd_gradcheck)
    return p


_NEEDS_CONFIG = {"prepare", "partition", "train", "evaluate", "experiment"}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command in _NEEDS_CONFIG and not args.config:
        print(f"error: {args.command} requires --config", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return args.fn(args)
    except (ConfigError, KMismatchError, DataError, SeriesError, PartitionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
