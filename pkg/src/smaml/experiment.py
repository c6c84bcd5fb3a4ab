"""End-to-end pipeline: prepare -> partition -> meta-train -> meta-test -> aggregate."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import METHODS, ExperimentConfig
from .data import DomainSpec, Registry, ResultRow, generate_synthetic, load_csv, register_domains, write_results
from .meta import EvalRecord, PreparedSeries, meta_test, meta_train
from .model import ModelParams, init_params
from .partition import TaskSet, build_successive_tasks, build_tasks, make_windows
from .series import (
    Series,
    TransformStack,
    adf_test,
    difference,
    exponential_smoothing,
    normalize_minmax,
    select_difference_order,
)

log = logging.getLogger(__name__)


def cell_seed(master: int, method: str, N: int, K: int, index: int) -> int:
    """Per-cell seed: first 8 bytes (little-endian) of sha256("master|method|N|K|index")."""
    digest = hashlib.sha256(f"{master}|{method}|{N}|{K}|{index}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def split_seed(seed: int) -> dict[str, int]:
    init, partition, train, target = np.random.SeedSequence(seed).generate_state(4, dtype=np.uint64)
    return {"init": int(init), "partition": int(partition), "train": int(train), "target": int(target)}


def dataset_fingerprint(series_list) -> str:
    h = hashlib.sha256()
    for s in series_list:
        h.update(s.name.encode())
        h.update(np.ascontiguousarray(s.values, dtype="<f8").tobytes())
    return h.hexdigest()


# --- preparation -----------------------------------------------------------


@dataclass(frozen=True)
class PrepReport:
    name: str
    length: int
    adf_statistic: float | None
    adf_critical_5pct: float | None
    adf_stationary: bool | None
    diff_order: int
    norm_min: float
    norm_max: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def prepare_series(series: Series, differencing: str = "auto", max_d: int = 2, max_lag: int | None = None):
    """Choose the differencing order, difference, then scale to [0, 1]."""
    try:
        report = adf_test(series, max_lag)
        stat, crit, stationary = report.statistic, report.critical_value_5pct, report.is_stationary
    except ValueError:
        if differencing == "auto":
            raise
        stat = crit = stationary = None
    if differencing == "auto":
        d = select_difference_order(series, max_d, max_lag)
    elif differencing == "off":
        d = 0
    else:
        d = int(differencing)
    if d:
        diffed, stack = difference(series, d)
    else:
        diffed, stack = series, TransformStack()
    normed, nstack = normalize_minmax(diffed)
    stack = stack.with_normalization(nstack.norm_min, nstack.norm_max)
    prepared = PreparedSeries(series.values, normed.values, stack)
    rep = PrepReport(series.name, len(series), stat, crit, stationary, d, nstack.norm_min, nstack.norm_max)
    return prepared, rep


def load_registry(cfg: ExperimentConfig) -> Registry:
    def resolve(p):
        path = Path(p)
        return path if path.is_absolute() else cfg.base_dir / path

    if cfg.source_csv:
        sources = [
            DomainSpec(f"source{i}", "source", (load_csv(resolve(p), cfg.column, name=f"source{i}"),), f"condition{i + 1}")
            for i, p in enumerate(cfg.source_csv)
        ]
    else:
        sources = []
        for i in range(cfg.source_count):
            spec = cfg.source_synth
            s, _ = generate_synthetic(type(spec)(**{**spec.__dict__, "seed": spec.seed + i}))
            sources.append(DomainSpec(f"source{i}", "source", (Series(s.values, name=f"source{i}"),), f"condition{i + 1}"))
    if cfg.target_csv:
        targets = [
            DomainSpec(f"target{i}", "target", (load_csv(resolve(p), cfg.column, name=f"target{i}"),), "target")
            for i, p in enumerate(cfg.target_csv)
        ]
    else:
        s, _ = generate_synthetic(cfg.target_synth)
        targets = [DomainSpec("target0", "target", (Series(s.values, name="target0"),), "target")]
    return register_domains(sources, targets, cfg.integrate_conditions)


@dataclass
class PreparedData:
    source: dict[str, PreparedSeries]
    target: dict[str, PreparedSeries]
    reports: list[PrepReport]
    fingerprint: str


def prepare_registry(reg: Registry, cfg: ExperimentConfig, differencing: str | None = None) -> PreparedData:
    mode = cfg.differencing if differencing is None else differencing
    source, target, reports = {}, {}, []
    for bucket, series_list in ((source, reg.source_series()), (target, reg.target_series())):
        for s in series_list:
            prepared, rep = prepare_series(s, mode, cfg.max_d, cfg.adf_max_lag)
            bucket[s.name] = prepared
            reports.append(rep)
    return PreparedData(source, target, reports, dataset_fingerprint(reg.source_series() + reg.target_series()))


def domain_windows(prepared: dict[str, PreparedSeries], input_len: int, stride: int, es_alpha: float | None = None):
    """Windows over each series separately, concatenated in series order."""
    out = []
    for name, ps in prepared.items():
        values = ps.transformed
        if es_alpha is None:
            out.extend(make_windows(values, input_len, stride, source=name))
        else:
            out.extend(make_windows(exponential_smoothing(values, es_alpha), input_len, stride, targets=values, source=name))
    return out


def eligible_queries(windows, K: int) -> int:
    return sum(1 for q in range(K, len(windows)) if windows[q - K].source == windows[q].source)


# --- one grid cell ---------------------------------------------------------


@dataclass
class CellResult:
    method: str
    N: int
    K: int
    input_len: int
    seed_index: int
    seed: int
    records: list[EvalRecord] = field(default_factory=list)
    trace: list = field(default_factory=list)
    params: ModelParams | None = None
    error: str | None = None

    @property
    def mae(self) -> float:
        return float(np.mean([r.mae_original_units for r in self.records]))


def _method_data(cfg: ExperimentConfig, method: str, prepared_cache: dict) -> PreparedData:
    # smoothing stands in for differencing in the ES variant
    mode = "off" if method == "esmaml" else cfg.differencing
    if mode not in prepared_cache:
        prepared_cache[mode] = prepare_registry(load_registry(cfg), cfg, mode)
    return prepared_cache[mode]


def build_cell_tasks(cfg, method, N, K, L, seed, data: PreparedData) -> tuple[TaskSet, TaskSet]:
    seeds = split_seed(seed)
    alpha = cfg.alpha if method == "esmaml" else None
    src_windows = domain_windows(data.source, L, cfg.stride, alpha)
    tasks = build_tasks(METHODS[method], src_windows, K, N, seeds["partition"])
    tgt_windows = domain_windows(data.target, L, cfg.stride, alpha)
    n_target = eligible_queries(tgt_windows, K) if cfg.target_N is None else cfg.target_N
    target_tasks = build_successive_tasks(tgt_windows, K, n_target, seeds["target"])
    return tasks, target_tasks


def run_cell(cfg: ExperimentConfig, method: str, N: int, K: int, L: int, seed_index: int, master_seed: int,
             prepared_cache: dict | None = None, keep_params: bool = False) -> CellResult:
    seed = cell_seed(master_seed, method, N, K, seed_index)
    res = CellResult(method, N, K, L, seed_index, seed)
    data = _method_data(cfg, method, {} if prepared_cache is None else prepared_cache)
    tasks, target_tasks = build_cell_tasks(cfg, method, N, K, L, seed, data)
    seeds = split_seed(seed)
    theta0 = init_params(1, cfg.hidden_size, L // 4, seeds["init"])
    theta = meta_train(theta0, tasks, cfg.meta, seeds["train"], trace=res.trace)
    res.records = meta_test(theta, target_tasks, data.target, cfg.meta, seed_index, K=K)
    if keep_params:
        res.params = theta
    return res


def _run_cell_safe(args) -> CellResult:
    cfg, method, N, K, L, i, master = args
    try:
        return run_cell(cfg, method, N, K, L, i, master)
    except Exception as exc:  # reported per cell; the run exits nonzero
        log.exception("cell %s N=%d K=%d L=%d seed=%d failed", method, N, K, L, i)
        res = CellResult(method, N, K, L, i, cell_seed(master, method, N, K, i))
        res.error = f"{type(exc).__name__}: {exc}"
        return res


def grid(cfg: ExperimentConfig):
    for method in cfg.methods:
        for L in cfg.input_len:
            for N in cfg.N:
                for K in cfg.K:
                    yield method, N, K, L


@dataclass
class ExperimentOutcome:
    rows: list[ResultRow]
    cells: list[CellResult]

    @property
    def ok(self) -> bool:
        return all(c.error is None for c in self.cells)


def run_experiment(cfg: ExperimentConfig, master_seed: int = 0, threads: int = 1, out_dir=None) -> ExperimentOutcome:
    jobs = [(cfg, m, N, K, L, i, master_seed) for (m, N, K, L) in grid(cfg) for i in cfg.seeds]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            cells = list(pool.map(_run_cell_safe, jobs))
    else:
        cells = [_run_cell_safe(j) for j in jobs]
    rows = []
    for m, N, K, L in grid(cfg):
        group = [c for c in cells if (c.method, c.N, c.K, c.input_len) == (m, N, K, L)]
        good = [c for c in group if c.error is None]
        per_seed = tuple(c.mae for c in good) or (float("nan"),)
        rows.append(ResultRow(cfg.dataset, m, N, K, L, per_seed, complete=len(good) == len(group)))
    outcome = ExperimentOutcome(rows, cells)
    if out_dir is not None:
        write_outputs(outcome, Path(out_dir))
    return outcome


def write_outputs(outcome: ExperimentOutcome, out_dir: Path) -> None:
    write_results(outcome.rows, out_dir)
    with (out_dir / "loss_trace.csv").open("w", encoding="utf-8") as fh:
        fh.write("method,N,K,input_len,seed_index,epoch,batch,query_mse\n")
        for c in outcome.cells:
            for epoch, b, loss in c.trace:
                fh.write(f"{c.method},{c.N},{c.K},{c.input_len},{c.seed_index},{epoch},{b},{float(loss)!r}\n")
    with (out_dir / "records.csv").open("w", encoding="utf-8") as fh:
        fh.write("method,N,K,input_len,seed_index,task_id,mae_original_units,mae_transformed,mae_unadapted\n")
        for c in outcome.cells:
            for r in c.records:
                fh.write(
                    f"{c.method},{c.N},{c.K},{c.input_len},{c.seed_index},{r.task_id},"
                    f"{float(r.mae_original_units)!r},{float(r.mae_transformed)!r},{float(r.mae_unadapted)!r}\n"
                )
    failures = {f"{c.method}/N{c.N}/K{c.K}/L{c.input_len}/seed{c.seed_index}": c.error for c in outcome.cells if c.error}
    (out_dir / "status.json").write_text(
        json.dumps({"complete": not failures, "failures": failures}, indent=1) + "\n", encoding="utf-8"
    )
