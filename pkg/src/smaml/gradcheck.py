"""Central finite-difference checks for every differentiable op."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .model import init_params, lstm_forward

H_STEP = 1e-5
TOLERANCE = 1e-4
# entries whose magnitude is below this are compared absolutely
DENOM_FLOOR = 1e-6


@dataclass(frozen=True)
class CheckResult:
    op: str
    max_rel_error: float
    n_shapes: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), DENOM_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_function(build: Callable[[ad.Tape, list], ad.Tensor], inputs: list[np.ndarray], h: float = H_STEP) -> float:
    """Compare tape gradients of ``build`` against central differences.

    ``build(tape, leaves)`` must return a scalar tensor. Every input array is
    perturbed coordinate by coordinate.
    """
    tape = ad.Tape()
    leaves = [tape.leaf(x) for x in inputs]
    out = build(tape, leaves)
    tape.backward(out)
    analytic = [tape.grad(l) for l in leaves]

    def value(arrs):
        t = ad.Tape()
        return float(build(t, [t.leaf(a) for a in arrs]).value)

    worst = 0.0
    for k, x in enumerate(inputs):
        num = np.zeros_like(x, dtype=np.float64)
        for idx in np.ndindex(x.shape):
            plus = [a.copy() for a in inputs]
            minus = [a.copy() for a in inputs]
            plus[k][idx] += h
            minus[k][idx] -= h
            num[idx] = (value(plus) - value(minus)) / (2 * h)
        worst = max(worst, relative_error(analytic[k], num))
    return worst


def _weighted(t: ad.Tensor, rng) -> ad.Tensor:
    # random projection to a scalar so every output entry matters
    w = rng.normal(size=t.shape)
    return ad.sum_(ad.mul(t, w))


def _cases(rng) -> dict[str, list[tuple[Callable, list]]]:
    def shapes2():
        return [(3,), (2, 4), (5, 3)]

    cases: dict[str, list] = {}
    cases["add"] = [(lambda tp, l: _weighted(ad.add(l[0], l[1]), np.random.default_rng(1)), [rng.normal(size=s), rng.normal(size=s)]) for s in shapes2()]
    cases["sub"] = [(lambda tp, l: _weighted(ad.sub(l[0], l[1]), np.random.default_rng(2)), [rng.normal(size=s), rng.normal(size=s)]) for s in shapes2()]
    cases["mul"] = [(lambda tp, l: _weighted(ad.mul(l[0], l[1]), np.random.default_rng(3)), [rng.normal(size=s), rng.normal(size=s)]) for s in shapes2()]
    cases["scale"] = [(lambda tp, l: _weighted(ad.scale(l[0], -1.7), np.random.default_rng(4)), [rng.normal(size=s)]) for s in shapes2()]
    cases["matmul"] = [
        (lambda tp, l: _weighted(ad.matmul(l[0], l[1]), np.random.default_rng(5)), [rng.normal(size=a), rng.normal(size=b)])
        for a, b in [((3,), (3, 2)), ((2, 4), (4, 3)), ((5, 2), (2,))]
    ]
    cases["transpose"] = [(lambda tp, l: _weighted(ad.transpose(l[0]), np.random.default_rng(6)), [rng.normal(size=s)]) for s in [(2, 3), (4, 1), (3, 3)]]
    cases["sigmoid"] = [(lambda tp, l: _weighted(ad.sigmoid(l[0]), np.random.default_rng(7)), [rng.normal(size=s) * 2]) for s in shapes2()]
    cases["tanh"] = [(lambda tp, l: _weighted(ad.tanh(l[0]), np.random.default_rng(8)), [rng.normal(size=s) * 2]) for s in shapes2()]
    cases["square"] = [(lambda tp, l: _weighted(ad.square(l[0]), np.random.default_rng(9)), [rng.normal(size=s)]) for s in shapes2()]
    # keep entries away from the kink at zero
    cases["abs"] = [
        (lambda tp, l: _weighted(ad.abs_(l[0]), np.random.default_rng(10)), [np.sign(v) * (0.1 + np.abs(v)) for v in [rng.normal(size=s)]])
        for s in shapes2()
    ]
    cases["getitem"] = [
        (lambda tp, l, ix=ix: _weighted(ad.getitem(l[0], ix), np.random.default_rng(11)), [rng.normal(size=s)])
        for s, ix in [((5,), slice(1, 4)), ((3, 4), (..., slice(0, 2))), ((4, 3), (np.array([0, 2, 2]),))]
    ]
    cases["concat"] = [
        (lambda tp, l, ax=ax: _weighted(ad.concat([l[0], l[1]], axis=ax), np.random.default_rng(12)), [rng.normal(size=a), rng.normal(size=b)])
        for a, b, ax in [((2,), (3,), 0), ((2, 3), (2, 1), 1), ((1, 4), (3, 4), 0)]
    ]
    cases["reshape"] = [(lambda tp, l: _weighted(ad.reshape(l[0], (-1,)), np.random.default_rng(13)), [rng.normal(size=s)]) for s in shapes2()]
    cases["sum"] = [(lambda tp, l: ad.sum_(l[0]), [rng.normal(size=s)]) for s in shapes2()]
    cases["mean"] = [(lambda tp, l: ad.mean(l[0]), [rng.normal(size=s)]) for s in shapes2()]
    cases["mse_loss"] = [
        (lambda tp, l, tgt=tgt: ad.mse_loss(l[0], tgt), [rng.normal(size=s)])
        for s, tgt in [((3,), rng.normal(size=3)), ((2, 4), rng.normal(size=(2, 4))), ((4,), rng.normal(size=4))]
    ]

    def cell_case(B, I, Hd):
        xs = (B, I) if B else (I,)
        hs = (B, Hd) if B else (Hd,)
        arrs = [rng.normal(size=xs), rng.normal(size=hs) * 0.5, rng.normal(size=hs) * 0.5,
                rng.normal(size=(4 * Hd, I)) * 0.5, rng.normal(size=(4 * Hd, Hd)) * 0.5, rng.normal(size=4 * Hd) * 0.5]
        def build(tp, l):
            h, c = ad.lstm_cell(*l)
            return ad.add(_weighted(h, np.random.default_rng(14)), _weighted(c, np.random.default_rng(15)))

        return build, arrs

    cases["lstm_cell"] = [cell_case(0, 2, 3), cell_case(3, 1, 2), cell_case(2, 3, 4)]

    def model_case(L, I, Hd, O, B):
        p = init_params(I, Hd, O, seed=int(rng.integers(1 << 30)))
        segs = list(p.segments().values())
        x = rng.normal(size=(B, L, I) if B else (L, I))
        y = rng.normal(size=(B, O) if B else (O,))
        names = list(p.segments())

        def build(tp, l):
            out = lstm_forward(p, x, tp, leaves=dict(zip(names, l)))
            return ad.mse_loss(out, y)

        return build, [s.copy() for s in segs]

    cases["lstm_model"] = [model_case(4, 1, 3, 1, 0), model_case(6, 1, 5, 2, 3), model_case(8, 2, 4, 2, 2)]
    return cases


OPS = tuple(_cases(np.random.default_rng(0)).keys())


def run_gradcheck(seed: int = 0, cases=None) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    cases = _cases(rng) if cases is None else cases
    results = []
    for name, items in cases.items():
        worst = max(check_function(b, arrs) for b, arrs in items)
        results.append(CheckResult(name, worst, len(items)))
    return results
