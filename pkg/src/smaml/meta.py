"""First-order MAML over pseudo meta-tasks, fine-tuning and meta-testing."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .autodiff import mae_metric
from .model import ModelParams, loss_and_grad, predict
from .optim import AdamState, adam_step, sgd_step
from .partition import TaskSet, WindowPair
from .series import TransformStack, denormalize, integrate_forecast

log = logging.getLogger(__name__)


class MetaError(RuntimeError):
    pass


class TaskAborted(MetaError):
    pass


class KMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class MetaConfig:
    inner_lr: float = 0.001
    inner_steps: int = 10
    outer_lr: float = 0.001
    meta_epochs: int = 8
    tasks_per_meta_batch: int = 4
    first_order: bool = True
    finetune_steps: int | None = None  # None -> inner_steps
    max_abort_fraction: float = 0.10

    def __post_init__(self):
        if not self.inner_lr >= 0:
            raise ValueError("inner_lr must be non-negative")
        if self.inner_steps < 1:
            raise ValueError("inner_steps must be at least 1")
        if self.tasks_per_meta_batch < 1:
            raise ValueError("tasks_per_meta_batch must be positive")
        if self.meta_epochs < 0:
            raise ValueError("meta_epochs must be non-negative")


@dataclass(frozen=True)
class EvalRecord:
    mae_original_units: float
    mae_transformed: float
    task_id: int
    seed: int
    mae_unadapted: float = float("nan")


@dataclass(frozen=True)
class PreparedSeries:
    """A source series in original units alongside its transformed copy.

    ``offset`` maps a transformed index to the original one (the differencing
    order); ``stack`` undoes normalization then differencing.
    """

    original: np.ndarray
    transformed: np.ndarray
    stack: TransformStack

    @property
    def offset(self) -> int:
        return self.stack.diff_order

    def to_original(self, window: WindowPair, pred_transformed) -> tuple[np.ndarray, np.ndarray]:
        """Map a transformed-space prediction for ``window`` to original units.

        Returns ``(prediction, truth)`` in original units.
        """
        d = self.offset
        e = window.origin_index + d  # last input position in original indexing
        h = len(window.target)
        if e + h >= len(self.original):
            raise MetaError("window extends past the original series")
        pred = denormalize(pred_transformed, self.stack)
        if d:
            if e - d + 1 < 0:
                raise MetaError("inconsistent transform stack for window")
            pred = integrate_forecast(self.original[e - d + 1 : e + 1], pred)
        return pred, self.original[e + 1 : e + 1 + h]


def _stack_windows(windows: Sequence[WindowPair]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([w.input for w in windows]), np.stack([w.target for w in windows])


def inner_adapt(theta: ModelParams, support: Sequence[WindowPair], cfg: MetaConfig, steps: int | None = None):
    """Gradient steps on the mean support MSE; returns adapted params.

    The support set is evaluated as one batch, which gives the same mean
    loss as iterating window by window.
    """
    if not support:
        raise MetaError("support set is empty")
    x, y = _stack_windows(support)
    params = theta
    for _ in range(cfg.inner_steps if steps is None else steps):
        if cfg.inner_lr == 0:
            break
        loss, g = loss_and_grad(params, x, y)
        if not np.isfinite(loss):
            raise TaskAborted(f"non-finite support loss {loss}")
        params = sgd_step(params, g, cfg.inner_lr)
    return params


def support_loss(params: ModelParams, support: Sequence[WindowPair]) -> float:
    x, y = _stack_windows(support)
    return float(np.mean((predict(params, x) - y) ** 2))


def meta_train(
    theta0: ModelParams,
    tasks: TaskSet,
    cfg: MetaConfig,
    seed: int,
    trace: list | None = None,
) -> ModelParams:
    """First-order MAML with an Adam outer optimizer.

    Each epoch visits the tasks in a seeded random order, ``tasks_per_meta_batch``
    at a time. The outer gradient is the batch mean of query-loss gradients
    taken at the adapted parameters. Rows ``(epoch, batch, mean_query_loss)``
    are appended to ``trace`` when given.
    """
    if len(tasks) == 0:
        raise MetaError("task set is empty")
    if not cfg.first_order:
        raise NotImplementedError("second-order MAML is not implemented; use first_order=True")
    rng = np.random.default_rng(seed)
    theta = theta0
    state = AdamState.zeros_like(theta0)
    attempted = aborted = 0
    B = cfg.tasks_per_meta_batch
    for epoch in range(cfg.meta_epochs):
        order = rng.permutation(len(tasks))
        for b, start in enumerate(range(0, len(order), B)):
            grads, losses = [], []
            for idx in order[start : start + B]:
                task = tasks.tasks[idx]
                attempted += 1
                try:
                    adapted = inner_adapt(theta, task.support, cfg)
                    loss, g = loss_and_grad(adapted, task.query.input[None, :], task.query.target[None, :])
                    if not np.isfinite(loss) or not np.all(np.isfinite(g.flat())):
                        raise TaskAborted(f"non-finite query loss {loss}")
                except (TaskAborted, FloatingPointError) as exc:
                    aborted += 1
                    log.warning("task %d aborted in epoch %d: %s", idx, epoch, exc)
                    if aborted > cfg.max_abort_fraction * max(attempted, len(tasks)):
                        raise MetaError(f"{aborted} of {attempted} tasks aborted") from exc
                    continue
                grads.append(g.flat())
                losses.append(loss)
            if not grads:
                continue
            # fixed reduction order keeps runs bit-identical
            outer = np.mean(np.stack(grads), axis=0)
            theta, state = adam_step(theta, outer, state, cfg.outer_lr)
            if trace is not None:
                trace.append((epoch, b, float(np.mean(losses))))
    return theta


def fine_tune(theta: ModelParams, target_support: Sequence[WindowPair], cfg: MetaConfig, K: int) -> ModelParams:
    """Adapt meta-trained params on target-domain support data.

    ``K`` is the support size used during meta-training; a different support
    size is rejected.
    """
    if len(target_support) != K:
        raise KMismatchError(f"fine-tuning support has {len(target_support)} samples but meta-training used K={K}")
    return inner_adapt(theta, target_support, cfg, steps=cfg.finetune_steps)


def meta_test(
    theta: ModelParams,
    target_tasks: TaskSet,
    prepared: Mapping[str, PreparedSeries],
    cfg: MetaConfig,
    seed: int,
    K: int | None = None,
) -> list[EvalRecord]:
    """Fine-tune on each target support, predict its query, score in both spaces."""
    K = target_tasks.K if K is None else K
    if target_tasks.K != K:
        raise KMismatchError(f"target tasks use K={target_tasks.K} but meta-training used K={K}")
    records = []
    for tid, task in enumerate(target_tasks.tasks):
        q = task.query
        if q.source not in prepared:
            raise MetaError(f"no transform stack for series {q.source!r}")
        tuned = fine_tune(theta, task.support, cfg, K)
        pred = predict(tuned, q.input)
        base = predict(theta, q.input)
        ps = prepared[q.source]
        pred_orig, truth = ps.to_original(q, pred)
        base_orig, _ = ps.to_original(q, base)
        records.append(
            EvalRecord(
                mae_original_units=mae_metric(pred_orig, truth),
                mae_transformed=mae_metric(pred, q.target),
                task_id=tid,
                seed=seed,
                mae_unadapted=mae_metric(base_orig, truth),
            )
        )
    return records


@dataclass(frozen=True)
class SeedSummary:
    mean: float
    per_seed: dict = field(default_factory=dict)


def aggregate_seeds(records_by_seed: Mapping[int, Sequence[EvalRecord]] | Mapping[int, float]) -> SeedSummary:
    """Mean over seeds of each seed's mean MAE (original units)."""
    if not records_by_seed:
        raise ValueError("no seed groups to aggregate")
    per_seed = {}
    for s in sorted(records_by_seed):
        group = records_by_seed[s]
        if isinstance(group, (int, float)):
            per_seed[s] = float(group)
        else:
            if not group:
                raise ValueError(f"seed {s} has no records")
            per_seed[s] = float(np.mean([r.mae_original_units for r in group]))
    return SeedSummary(float(np.mean(list(per_seed.values()))), per_seed)
