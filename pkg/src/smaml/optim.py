"""Plain gradient descent and bias-corrected Adam over ModelParams."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelParams


class GradientOverflowError(FloatingPointError):
    pass


def _finite(g: np.ndarray):
    if not np.all(np.isfinite(g)):
        raise GradientOverflowError("gradient overflow: non-finite gradient entries")


def _align(params: ModelParams, grads) -> np.ndarray:
    g = grads.flat() if isinstance(grads, ModelParams) else np.asarray(grads, dtype=np.float64)
    if g.shape != (params.size,):
        raise ValueError(f"gradient of length {g.size} not aligned with {params.size} parameters")
    return g


def sgd_step(params: ModelParams, grads, lr: float) -> ModelParams:
    g = _align(params, grads)
    _finite(g)
    return params.with_flat(params.flat() - lr * g)


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-9

    @classmethod
    def zeros_like(cls, params: ModelParams, **kw) -> "AdamState":
        return cls(np.zeros(params.size), np.zeros(params.size), 0, **kw)


def adam_step(params: ModelParams, grads, state: AdamState, lr: float) -> tuple[ModelParams, AdamState]:
    g = _align(params, grads)
    _finite(g)
    b1, b2 = state.beta1, state.beta2
    t = state.step_count + 1
    m = b1 * state.m + (1.0 - b1) * g
    v = b2 * state.v + (1.0 - b2) * g * g
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    new = params.flat() - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params.with_flat(new), AdamState(m, v, t, b1, b2, state.eps)
