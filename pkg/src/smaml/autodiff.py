"""Tape-based reverse-mode automatic differentiation on dense float64 arrays.

Every operation appends a node holding its parents and a vector-Jacobian
product. :meth:`Tape.backward` walks the nodes in reverse once; a tape is
consumed by its backward pass unless created with ``retain=True``.

The op set is what the LSTM learner needs: elementwise arithmetic, matmul,
sigmoid/tanh, slicing, concatenation, reductions, and a fused LSTM cell
whose hand-written backward is checked against the composed ops.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class TapeError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("value", "tape", "id")

    def __init__(self, value: np.ndarray, tape: "Tape", id: int):
        self.value = value
        self.tape = tape
        self.id = id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, id={self.id})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


class Tape:
    def __init__(self, retain: bool = False):
        self.retain = retain
        self._parents: list[tuple[int, ...]] = []
        self._vjps: list[Callable | None] = []
        self._shapes: list[tuple[int, ...]] = []
        self._grads: list[np.ndarray | None] | None = None
        self._consumed = False
        self.params = None  # name -> Tensor, set by watch_params

    def __len__(self):
        return len(self._parents)

    def leaf(self, value) -> Tensor:
        v = np.asarray(value, dtype=np.float64)
        return self._record(v, (), None)

    def constant(self, value) -> Tensor:
        return self.leaf(value)

    def _record(self, value: np.ndarray, parents: tuple[int, ...], vjp) -> Tensor:
        if self._consumed:
            raise TapeError("tape already consumed by backward; create a new tape")
        self._parents.append(parents)
        self._vjps.append(vjp)
        self._shapes.append(value.shape)
        return Tensor(value, self, len(self._parents) - 1)

    def watch_params(self, params) -> dict[str, Tensor]:
        self.params = {name: self.leaf(arr) for name, arr in params.segments().items()}
        return self.params

    def backward(self, loss: Tensor, seed: float = 1.0) -> None:
        if loss.tape is not self:
            raise TapeError("loss was not recorded on this tape")
        if self._consumed:
            raise TapeError("tape already consumed by backward; pass retain=True to reuse it")
        if loss.value.size != 1:
            raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: list[np.ndarray | None] = [None] * len(self._parents)
        grads[loss.id] = np.full(loss.shape, seed, dtype=np.float64)
        for i in range(loss.id, -1, -1):
            g = grads[i]
            vjp = self._vjps[i]
            if g is None or vjp is None:
                continue
            for pid, pg in zip(self._parents[i], vjp(g)):
                if pg is None:
                    continue
                if grads[pid] is None:
                    grads[pid] = pg
                else:
                    grads[pid] = grads[pid] + pg
        self._grads = grads
        if not self.retain:
            self._consumed = True

    def grad(self, t: Tensor) -> np.ndarray:
        if self._grads is None:
            raise TapeError("backward has not been run on this tape")
        g = self._grads[t.id]
        return np.zeros(self._shapes[t.id]) if g is None else g


def _lift(x, like: Tensor) -> Tensor:
    return x if isinstance(x, Tensor) else like.tape.constant(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a: Tensor, b) -> Tensor:
    b = _lift(b, a)
    sa, sb = a.shape, b.shape
    return a.tape._record(
        a.value + b.value, (a.id, b.id), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def sub(a: Tensor, b) -> Tensor:
    b = _lift(b, a)
    sa, sb = a.shape, b.shape
    return a.tape._record(
        a.value - b.value, (a.id, b.id), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb))
    )


def mul(a: Tensor, b) -> Tensor:
    b = _lift(b, a)
    av, bv = a.value, b.value
    return a.tape._record(
        av * bv,
        (a.id, b.id),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    return a.tape._record(a.value * c, (a.id,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for 1-D or 2-D operands."""
    av, bv = a.value, b.value
    if av.ndim > 2 or bv.ndim > 2:
        raise TapeError("matmul supports 1-D and 2-D operands only")

    def vjp(g):
        A = av if av.ndim == 2 else av[None, :]
        B = bv if bv.ndim == 2 else bv[:, None]
        G = g.reshape(A.shape[0], B.shape[1])
        return (G @ B.T).reshape(av.shape), (A.T @ G).reshape(bv.shape)

    return a.tape._record(av @ bv, (a.id, b.id), vjp)


def transpose(a: Tensor) -> Tensor:
    return a.tape._record(a.value.T, (a.id,), lambda g: (g.T,))


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    s = sigmoid_np(a.value)
    return a.tape._record(s, (a.id,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.value)
    return a.tape._record(t, (a.id,), lambda g: (g * (1.0 - t * t),))


def square(a: Tensor) -> Tensor:
    v = a.value
    return a.tape._record(v * v, (a.id,), lambda g: (2.0 * g * v,))


def abs_(a: Tensor) -> Tensor:
    v = a.value
    return a.tape._record(np.abs(v), (a.id,), lambda g: (g * np.sign(v),))


def _is_basic(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(p is Ellipsis or isinstance(p, (int, slice)) for p in parts)


def getitem(a: Tensor, idx) -> Tensor:
    shape = a.shape
    basic = _is_basic(idx)

    def vjp(g):
        out = np.zeros(shape)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return a.tape._record(a.value[idx], (a.id,), vjp)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    tape = parts[0].tape
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]
    return tape._record(
        np.concatenate([p.value for p in parts], axis=axis),
        tuple(p.id for p in parts),
        lambda g: tuple(np.split(g, cuts, axis=axis)),
    )


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return a.tape._record(a.value.reshape(shape), (a.id,), lambda g: (g.reshape(old),))


def sum_(a: Tensor) -> Tensor:
    shape = a.shape
    return a.tape._record(np.array(a.value.sum()), (a.id,), lambda g: (np.full(shape, float(g)),))


def mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.value.size
    return a.tape._record(np.array(a.value.mean()), (a.id,), lambda g: (np.full(shape, float(g) / n),))


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w_ih: Tensor, w_hh: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step, gates stacked ``[input, forget, cell, output]``.

    ``x`` is ``(I,)`` or ``(B, I)``; ``h``/``c`` match with ``H`` features.
    Returns ``(h_next, c_next)``. Recorded as a single node producing the
    concatenation ``[h_next, c_next]`` along the last axis, followed by two
    slices.
    """
    xv, hv, cv = x.value, h.value, c.value
    W, U, bv = w_ih.value, w_hh.value, b.value
    H = U.shape[1]
    z = xv @ W.T + hv @ U.T + bv
    s = sigmoid_np(z)
    i = s[..., :H]
    f = s[..., H : 2 * H]
    o = s[..., 3 * H :]
    gg = np.tanh(z[..., 2 * H : 3 * H])
    c_next = f * cv + i * gg
    tc = np.tanh(c_next)
    h_next = o * tc

    def vjp(gout):
        dh = gout[..., :H]
        dc = gout[..., H:] + dh * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [
                dc * gg * i * (1.0 - i),
                dc * cv * f * (1.0 - f),
                dc * i * (1.0 - gg * gg),
                dh * tc * o * (1.0 - o),
            ],
            axis=-1,
        )
        dz2 = dz if dz.ndim == 2 else dz[None, :]
        x2 = xv if xv.ndim == 2 else xv[None, :]
        h2 = hv if hv.ndim == 2 else hv[None, :]
        return (
            dz @ W,
            dz @ U,
            dc * f,
            dz2.T @ x2,
            dz2.T @ h2,
            dz2.sum(axis=0),
        )

    node = x.tape._record(
        np.concatenate([h_next, c_next], axis=-1),
        (x.id, h.id, c.id, w_ih.id, w_hh.id, b.id),
        vjp,
    )
    return getitem(node, (..., slice(0, H))), getitem(node, (..., slice(H, 2 * H)))


def lstm_cell_composed(x, h, c, w_ih, w_hh, b):
    """The same step built from primitive ops; reference for the fused cell."""
    H = w_hh.shape[1]
    z = add(add(matmul(x, transpose(w_ih)), matmul(h, transpose(w_hh))), b)
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H : 2 * H])
    g = tanh(z[..., 2 * H : 3 * H])
    o = sigmoid(z[..., 3 * H :])
    c_next = add(mul(f, c), mul(i, g))
    h_next = mul(o, tanh(c_next))
    return h_next, c_next


def mse_loss(pred: Tensor, target) -> Tensor:
    t = np.asarray(target.value if isinstance(target, Tensor) else target, dtype=np.float64)
    if pred.shape != t.shape:
        raise ValueError(f"shape mismatch: prediction {pred.shape} vs target {t.shape}")
    return mean(square(sub(pred, t)))


def mae_metric(pred, target) -> float:
    p = np.asarray(pred.value if isinstance(pred, Tensor) else pred, dtype=np.float64)
    t = np.asarray(target.value if isinstance(target, Tensor) else target, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: prediction {p.shape} vs target {t.shape}")
    return float(np.mean(np.abs(p - t)))


def backward(tape: Tape, loss: Tensor):
    """Run reverse mode and return gradients aligned with the watched params."""
    if len(tape) == 0:
        raise TapeError("backward called before any forward computation")
    tape.backward(loss)
    if tape.params is None:
        raise TapeError("no parameters watched on this tape")
    from .model import ModelParams

    return ModelParams.from_segments({k: tape.grad(t) for k, t in tape.params.items()})
