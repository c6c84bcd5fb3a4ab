"""Sliding windows and pseudo meta-task construction.

Five partitioning strategies share one output type:

* ``successive``: the K windows immediately preceding the query, in order.
* ``random``: K windows drawn uniformly from everything except the query.
* ``shuffle``: successive membership, seeded random order.
* ``dtw``: the K causally earlier windows closest to the query under DTW.
* ``es``: successive selection over exponentially smoothed inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .series import Series, exponential_smoothing


class PartitionError(ValueError):
    pass


class Strategy(str, Enum):
    SUCCESSIVE = "successive"
    RANDOM = "random"
    SHUFFLE = "shuffle"
    DTW = "dtw"
    ES = "es"


@dataclass(frozen=True)
class WindowPair:
    input: np.ndarray
    target: np.ndarray
    origin_index: int
    source: str = ""

    def __post_init__(self):
        if len(self.input) != 4 * len(self.target):
            raise PartitionError("target length must be a quarter of the input length")


@dataclass(frozen=True)
class MetaTask:
    support: tuple[WindowPair, ...]
    query: WindowPair
    strategy_tag: Strategy
    query_position: int = -1
    support_positions: tuple[int, ...] = ()

    @property
    def K(self) -> int:
        return len(self.support)


@dataclass(frozen=True)
class TaskSet:
    tasks: tuple[MetaTask, ...]
    K: int
    strategy_tag: Strategy

    @property
    def N(self) -> int:
        return len(self.tasks)

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def to_records(self) -> list[dict]:
        """One JSON-ready dict per task, used by the ``partition`` command."""
        return [
            {
                "strategy": self.strategy_tag.value,
                "K": self.K,
                "query_origin": t.query.origin_index,
                "support_origins": [w.origin_index for w in t.support],
                "query_source": t.query.source,
            }
            for t in self.tasks
        ]


def make_windows(
    series: Series | np.ndarray,
    input_len: int,
    stride: int = 1,
    targets: np.ndarray | None = None,
    source: str = "",
) -> list[WindowPair]:
    """Cut ``(input, target)`` pairs with L inputs followed by L/4 targets.

    ``origin_index`` is the position of the last input element. When
    ``targets`` is given, targets are read from it instead of from the input
    series (used for smoothed inputs with raw targets).
    """
    values = series.values if isinstance(series, Series) else np.asarray(series, dtype=np.float64)
    if values.ndim != 1:
        raise PartitionError("windowing requires a univariate series")
    if input_len < 4 or input_len % 4:
        raise PartitionError("input length must be a positive multiple of 4")
    if stride < 1:
        raise PartitionError("stride must be positive")
    tgt = values if targets is None else np.asarray(targets, dtype=np.float64)
    if len(tgt) != len(values):
        raise PartitionError("target series must align with the input series")
    horizon = input_len // 4
    n = len(values)
    if n < input_len + horizon:
        raise PartitionError(
            f"series of length {n} too short for input length {input_len} + horizon {horizon}"
        )
    out = []
    for end in range(input_len - 1, n - horizon, stride):
        start = end - input_len + 1
        out.append(
            WindowPair(
                values[start : end + 1].copy(),
                tgt[end + 1 : end + 1 + horizon].copy(),
                end,
                source,
            )
        )
    return out


def make_es_windows(series: Series, input_len: int, stride: int = 1, alpha: float = 0.3, source: str = ""):
    smoothed = exponential_smoothing(series.values, alpha)
    return make_windows(smoothed, input_len, stride, targets=series.values, source=source)


def _check(windows: Sequence[WindowPair], K: int, N: int):
    if K < 1 or N < 1:
        raise PartitionError("K and N must be positive")
    if len(windows) < K + 1:
        raise PartitionError(f"need at least K+1={K + 1} windows, got {len(windows)}")
    if N > len(windows) - K:
        raise PartitionError(f"N={N} exceeds the {len(windows) - K} available query positions")


def _successive_queries(windows, K, N, seed) -> np.ndarray:
    # in pooled window lists the K predecessors must come from the query's own series
    eligible = np.array(
        [q for q in range(K, len(windows)) if windows[q - K].source == windows[q].source]
    )
    if len(eligible) < N:
        raise PartitionError(f"N={N} exceeds the {len(eligible)} available query positions")
    rng = np.random.default_rng(seed)
    return rng.choice(eligible, size=N, replace=False)


def _task(windows, q, positions, tag) -> MetaTask:
    return MetaTask(
        support=tuple(windows[p] for p in positions),
        query=windows[q],
        strategy_tag=tag,
        query_position=int(q),
        support_positions=tuple(int(p) for p in positions),
    )


def build_successive_tasks(windows, K: int, N: int, seed: int, _tag=Strategy.SUCCESSIVE) -> TaskSet:
    _check(windows, K, N)
    tasks = [_task(windows, q, range(q - K, q), _tag) for q in _successive_queries(windows, K, N, seed)]
    return TaskSet(tuple(tasks), K, _tag)


def build_random_tasks(windows, K: int, N: int, seed: int) -> TaskSet:
    _check(windows, K, N)
    rng = np.random.default_rng(seed)
    W = len(windows)
    queries = rng.choice(W, size=N, replace=False)
    tasks = []
    for q in queries:
        pool = np.delete(np.arange(W), q)
        tasks.append(_task(windows, q, rng.choice(pool, size=K, replace=False), Strategy.RANDOM))
    return TaskSet(tuple(tasks), K, Strategy.RANDOM)


def build_shuffle_tasks(windows, K: int, N: int, seed: int) -> TaskSet:
    base = build_successive_tasks(windows, K, N, seed)
    # separate stream so query choice matches the successive builder exactly
    rng = np.random.default_rng([seed, 1])
    tasks = []
    for t in base.tasks:
        perm = rng.permutation(K)
        positions = [t.support_positions[i] for i in perm]
        tasks.append(_task(windows, t.query_position, positions, Strategy.SHUFFLE))
    return TaskSet(tuple(tasks), K, Strategy.SHUFFLE)


def dtw_distance(a, b) -> float:
    """Unconstrained DTW with absolute-difference local cost."""
    a = [float(v) for v in a]
    b = [float(v) for v in b]
    if not a or not b:
        raise PartitionError("DTW needs non-empty sequences")
    inf = float("inf")
    prev = [inf] * (len(b) + 1)
    prev[0] = 0.0
    for x in a:
        cur = [inf] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = abs(x - y) + best
        prev = cur
    return prev[-1]


def build_dtw_tasks(windows, K: int, N: int, seed: int) -> TaskSet:
    """Support = the K nearest causally earlier windows by DTW on inputs.

    Only queries with at least K earlier windows are eligible, so sampling
    from that pool is equivalent to rejecting and redrawing ineligible ones.
    Ties resolve toward the smaller origin index.
    """
    _check(windows, K, N)
    rng = np.random.default_rng(seed)
    origins = np.array([w.origin_index for w in windows])
    sources = [w.source for w in windows]

    def causal(q):
        return [p for p in range(len(windows)) if sources[p] == sources[q] and origins[p] < origins[q]]

    eligible = [q for q in range(len(windows)) if len(causal(q)) >= K]
    if len(eligible) < N:
        raise PartitionError("not enough queries with K causally earlier windows")
    queries = rng.choice(np.array(eligible), size=N, replace=False)
    tasks = []
    for q in queries:
        cands = causal(q)
        scored = sorted(
            (dtw_distance(windows[p].input, windows[q].input), origins[p], p) for p in cands
        )
        tasks.append(_task(windows, q, [p for _, _, p in scored[:K]], Strategy.DTW))
    return TaskSet(tuple(tasks), K, Strategy.DTW)


def build_es_tasks(windows_from_smoothed_series, K: int, N: int, seed: int) -> TaskSet:
    return build_successive_tasks(windows_from_smoothed_series, K, N, seed, _tag=Strategy.ES)


BUILDERS = {
    Strategy.SUCCESSIVE: build_successive_tasks,
    Strategy.RANDOM: build_random_tasks,
    Strategy.SHUFFLE: build_shuffle_tasks,
    Strategy.DTW: build_dtw_tasks,
    Strategy.ES: build_es_tasks,
}


def build_tasks(strategy: Strategy | str, windows, K: int, N: int, seed: int) -> TaskSet:
    return BUILDERS[Strategy(strategy)](windows, K, N, seed)
