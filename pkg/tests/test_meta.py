import dataclasses

import numpy as np
import pytest

from smaml.meta import (
    EvalRecord,
    KMismatchError,
    MetaConfig,
    MetaError,
    PreparedSeries,
    aggregate_seeds,
    fine_tune,
    inner_adapt,
    meta_test,
    meta_train,
    support_loss,
)
from smaml.model import init_params, loss_and_grad, predict
from smaml.partition import build_random_tasks, build_successive_tasks, make_windows
from smaml.series import Series, TransformStack, difference, normalize_minmax


def sine_windows(phase=0.0, n=80, L=8, amp=0.4):
    t = np.arange(n)
    x = 0.5 + amp * np.sin(2 * np.pi * t / 12 + phase)
    return make_windows(Series(x), L)


def test_inner_lr_zero_is_identity():
    p = init_params(1, 4, 2, seed=0)
    ws = sine_windows()[:5]
    assert inner_adapt(p, ws, MetaConfig(inner_lr=0.0)) == p


def test_inner_adapt_does_not_mutate():
    p = init_params(1, 4, 2, seed=0)
    before = p.flat().copy()
    inner_adapt(p, sine_windows()[:5], MetaConfig())
    assert np.array_equal(p.flat(), before)


def test_inner_adapt_one_step_hand_oracle():
    p = init_params(1, 4, 2, seed=1)
    w = sine_windows()[3]
    _, g = loss_and_grad(p, w.input[None, :], w.target[None, :])
    got = inner_adapt(p, [w], MetaConfig(inner_lr=0.01, inner_steps=1))
    np.testing.assert_allclose(got.flat(), p.flat() - 0.01 * g.flat(), atol=1e-15)


def test_inner_adapt_empty_support():
    with pytest.raises(MetaError):
        inner_adapt(init_params(1, 2, 2, seed=0), [], MetaConfig())


def test_inner_adapt_reduces_support_loss():
    wins = 0
    for seed in range(20):
        p = init_params(1, 8, 2, seed=seed)
        ws = sine_windows(phase=seed * 0.3)[seed : seed + 5]
        before = support_loss(p, ws)
        after = support_loss(inner_adapt(p, ws, MetaConfig()), ws)
        wins += after < before
    assert wins >= 18


def test_meta_train_zero_epochs_identity():
    p = init_params(1, 4, 2, seed=0)
    ts = build_successive_tasks(sine_windows(), 3, 10, seed=0)
    assert meta_train(p, ts, MetaConfig(meta_epochs=0), seed=1) == p


def test_meta_train_deterministic():
    p = init_params(1, 4, 2, seed=0)
    ts = build_random_tasks(sine_windows(), 3, 10, seed=0)
    cfg = MetaConfig(meta_epochs=2, inner_steps=2)
    assert meta_train(p, ts, cfg, seed=5) == meta_train(p, ts, cfg, seed=5)


def test_meta_train_rejects_empty_and_second_order():
    p = init_params(1, 2, 2, seed=0)
    ts = build_successive_tasks(sine_windows(), 3, 4, seed=0)
    with pytest.raises(MetaError):
        meta_train(p, dataclasses.replace(ts, tasks=()), MetaConfig(), 0)
    with pytest.raises(NotImplementedError):
        meta_train(p, ts, MetaConfig(first_order=False), 0)


def reference_fomaml(theta, tasks, inner_lr, inner_steps, outer_lr, epochs, seed):
    """Hand-rolled first-order MAML with batch size 1, independent of meta_train's batching."""
    rng = np.random.default_rng(seed)
    vec = theta.flat().copy()
    m = np.zeros_like(vec)
    v = np.zeros_like(vec)
    t = 0
    for _ in range(epochs):
        for idx in rng.permutation(len(tasks.tasks)):
            task = tasks.tasks[idx]
            xs = np.stack([w.input for w in task.support])
            ys = np.stack([w.target for w in task.support])
            fast = vec.copy()
            for _ in range(inner_steps):
                _, g = loss_and_grad(theta.with_flat(fast), xs, ys)
                fast = fast - inner_lr * g.flat()
            _, gq = loss_and_grad(theta.with_flat(fast), task.query.input[None], task.query.target[None])
            g = gq.flat()
            t += 1
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            vec = vec - outer_lr * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-9)
    return vec


def test_meta_train_matches_reference_loop():
    p = init_params(1, 2, 2, seed=3)  # 4*2*4 + 2*2 + 2 = 38 params
    ts = build_successive_tasks(sine_windows(), 3, 8, seed=2)
    cfg = MetaConfig(inner_lr=0.05, inner_steps=3, outer_lr=0.01, meta_epochs=2, tasks_per_meta_batch=1)
    got = meta_train(p, ts, cfg, seed=11)
    ref = reference_fomaml(p, ts, 0.05, 3, 0.01, 2, 11)
    np.testing.assert_allclose(got.flat(), ref, atol=1e-10)


def test_meta_train_improves_query_loss():
    train = build_successive_tasks(sine_windows(phase=0.0, n=200), 5, 60, seed=0)
    test = build_successive_tasks(sine_windows(phase=1.3, n=120), 5, 30, seed=1)
    p0 = init_params(1, 8, 2, seed=0)
    cfg = MetaConfig(outer_lr=0.01, meta_epochs=4)

    def q_loss(p):
        return np.mean([support_loss(inner_adapt(p, t.support, cfg), [t.query]) for t in test])

    trained = meta_train(p0, train, cfg, seed=0)
    assert q_loss(trained) < q_loss(p0)


def test_trace_rows():
    trace = []
    ts = build_successive_tasks(sine_windows(), 3, 9, seed=0)
    meta_train(init_params(1, 2, 2, seed=0), ts, MetaConfig(meta_epochs=2, inner_steps=1), 0, trace=trace)
    assert len(trace) == 2 * 3  # ceil(9/4) batches per epoch
    assert all(np.isfinite(r[2]) for r in trace)


def test_abort_policy(monkeypatch):
    import smaml.meta as meta

    ts = build_successive_tasks(sine_windows(), 3, 20, seed=0)
    calls = {"n": 0}
    real = meta.inner_adapt

    def flaky(theta, support, cfg, steps=None):
        calls["n"] += 1
        if calls["n"] % 3 == 0:
            raise meta.TaskAborted("synthetic failure")
        return real(theta, support, cfg, steps)

    monkeypatch.setattr(meta, "inner_adapt", flaky)
    with pytest.raises(MetaError, match="aborted"):
        meta_train(init_params(1, 2, 2, seed=0), ts, MetaConfig(meta_epochs=1, inner_steps=1), 0)


def test_fine_tune_contract():
    p = init_params(1, 4, 2, seed=0)
    ws = sine_windows()
    assert fine_tune(p, ws[:5], MetaConfig(finetune_steps=0), K=5) == p
    with pytest.raises(KMismatchError):
        fine_tune(p, ws[:5], MetaConfig(), K=10)


def test_fine_tune_improves_over_unadapted():
    gains = []
    for seed in range(3):
        p = init_params(1, 8, 2, seed=seed)
        tasks = build_successive_tasks(sine_windows(phase=seed, n=100), 5, 20, seed=seed)
        cfg = MetaConfig(inner_lr=0.05)
        tuned = np.mean([support_loss(fine_tune(p, t.support, cfg, 5), [t.query]) for t in tasks])
        base = np.mean([support_loss(p, [t.query]) for t in tasks])
        gains.append(base - tuned)
    assert np.mean(gains) >= 0


def prepared_series(x, d):
    s = Series(x, name="tgt")
    if d:
        diffed, stack = difference(s, d)
    else:
        diffed, stack = s, TransformStack()
    normed, ns = normalize_minmax(diffed)
    return PreparedSeries(s.values, normed.values, stack.with_normalization(ns.norm_min, ns.norm_max))


def test_meta_test_exact_predictor_gives_zero(monkeypatch):
    import smaml.meta as meta

    x = np.cumsum(np.random.default_rng(0).normal(size=120)) + 50
    ps = prepared_series(x, 1)
    ws = make_windows(ps.transformed, 8, source="tgt")
    tasks = build_successive_tasks(ws, 5, 20, seed=0)
    lookup = {w.input.tobytes(): w.target for w in ws}
    monkeypatch.setattr(meta, "predict", lambda params, inp: lookup[np.asarray(inp).tobytes()].copy())
    recs = meta_test(init_params(1, 2, 2, 0), tasks, {"tgt": ps}, MetaConfig(finetune_steps=0), seed=0)
    assert len(recs) == 20
    for r in recs:
        assert r.mae_original_units == pytest.approx(0.0, abs=1e-9)
        assert r.mae_transformed == 0.0


def test_meta_test_zero_predictor_closed_form(monkeypatch):
    import smaml.meta as meta

    # no differencing, normalization only: transformed 0 maps back to the series minimum
    x = 10 + 3 * np.sin(np.arange(90) / 4.0)
    ps = prepared_series(x, 0)
    ws = make_windows(ps.transformed, 8, source="tgt")
    tasks = build_successive_tasks(ws, 5, 15, seed=3)
    monkeypatch.setattr(meta, "predict", lambda params, inp: np.zeros(2))
    recs = meta_test(init_params(1, 2, 2, 0), tasks, {"tgt": ps}, MetaConfig(finetune_steps=0), seed=0)
    for r, t in zip(recs, tasks):
        e = t.query.origin_index
        assert r.mae_original_units == pytest.approx(np.mean(np.abs(x[e + 1 : e + 3] - x.min())), abs=1e-12)
        assert r.mae_transformed == pytest.approx(np.mean(np.abs(t.query.target)), abs=1e-15)


def test_meta_test_transformed_mae_consistent():
    x = np.cumsum(np.random.default_rng(1).normal(size=100))
    ps = prepared_series(x, 1)
    ws = make_windows(ps.transformed, 8, source="tgt")
    tasks = build_successive_tasks(ws, 5, 10, seed=0)
    p = init_params(1, 4, 2, seed=0)
    cfg = MetaConfig(inner_steps=2)
    recs = meta_test(p, tasks, {"tgt": ps}, cfg, seed=0)
    for r, t in zip(recs, tasks):
        pred = predict(fine_tune(p, t.support, cfg, 5), t.query.input)
        assert r.mae_transformed == pytest.approx(np.mean(np.abs(pred - t.query.target)), abs=1e-15)


def test_meta_test_k_mismatch_and_missing_stack():
    ws = make_windows(np.linspace(0, 1, 50), 8, source="tgt")
    tasks = build_successive_tasks(ws, 5, 3, seed=0)
    p = init_params(1, 2, 2, 0)
    with pytest.raises(KMismatchError):
        meta_test(p, tasks, {}, MetaConfig(), 0, K=10)
    with pytest.raises(MetaError):
        meta_test(p, tasks, {}, MetaConfig(), 0)


def test_aggregate_seeds():
    assert aggregate_seeds({0: 1.0, 1: 2.0, 2: 3.0}).mean == 2.0
    assert aggregate_seeds({7: 0.25}).mean == 0.25
    recs = {s: [EvalRecord(v, v, 0, s), EvalRecord(v + 1, v, 1, s)] for s, v in [(0, 1.0), (1, 3.0)]}
    summary = aggregate_seeds(recs)
    assert summary.per_seed == {0: 1.5, 1: 3.5}
    assert summary.mean == 2.5
    assert aggregate_seeds(dict(reversed(list(recs.items())))).mean == summary.mean
    with pytest.raises(ValueError):
        aggregate_seeds({})
