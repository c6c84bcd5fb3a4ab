"""Time-series value types and pure transforms.

Differencing and its exact inverse, min-max normalization, the augmented
Dickey-Fuller unit-root test (constant, no trend) and least-squares AR fits.
Multichannel series are transformed channel by channel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class SeriesError(ValueError):
    """Raised when a series violates a transform's preconditions."""


class DegenerateSeriesError(SeriesError):
    pass


def _as_values(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim > 2:
        raise SeriesError(f"series values must be 1-D or 2-D, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class Series:
    """An immutable, chronologically ordered float64 series.

    ``values`` has shape ``(n,)`` for univariate data or ``(n, channels)``.
    """

    values: np.ndarray
    name: str = "series"

    def __post_init__(self):
        arr = _as_values(self.values)
        if arr.shape[0] < 1:
            raise SeriesError("series must contain at least one observation")
        if not np.all(np.isfinite(arr)):
            raise SeriesError(f"series {self.name!r} contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def channel_count(self) -> int:
        return 1 if self.values.ndim == 1 else self.values.shape[1]

    def __len__(self) -> int:
        return self.values.shape[0]

    def channel(self, i: int) -> "Series":
        if self.values.ndim == 1:
            if i != 0:
                raise IndexError(i)
            return self
        return Series(self.values[:, i], name=f"{self.name}[{i}]")


@dataclass(frozen=True)
class TransformStack:
    """Everything needed to undo differencing and normalization.

    ``diff_initials[k]`` is the first value of the series entering
    differencing pass ``k`` (one row per pass, one column per channel when
    multichannel). ``norm_min``/``norm_max`` are ``None`` when no
    normalization was applied.
    """

    diff_order: int = 0
    diff_initials: tuple = ()
    norm_min: float | np.ndarray | None = None
    norm_max: float | np.ndarray | None = None

    def __post_init__(self):
        if self.diff_order < 0:
            raise SeriesError("diff_order must be non-negative")
        if len(self.diff_initials) != self.diff_order:
            raise SeriesError(
                f"expected {self.diff_order} differencing initials, got {len(self.diff_initials)}"
            )
        if self.normalized and not np.all(np.asarray(self.norm_max) > np.asarray(self.norm_min)):
            raise SeriesError("norm_max must exceed norm_min")

    @property
    def normalized(self) -> bool:
        return self.norm_min is not None

    def with_normalization(self, lo, hi) -> "TransformStack":
        return TransformStack(self.diff_order, self.diff_initials, lo, hi)

    def to_dict(self) -> dict:
        def enc(v):
            if v is None:
                return None
            return np.asarray(v, dtype=np.float64).tolist()

        return {
            "diff_order": self.diff_order,
            "diff_initials": [enc(v) for v in self.diff_initials],
            "norm_min": enc(self.norm_min),
            "norm_max": enc(self.norm_max),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransformStack":
        def dec(v):
            if v is None:
                return None
            return float(v) if not isinstance(v, list) else np.asarray(v, dtype=np.float64)

        return cls(
            diff_order=int(d["diff_order"]),
            diff_initials=tuple(dec(v) for v in d["diff_initials"]),
            norm_min=dec(d["norm_min"]),
            norm_max=dec(d["norm_max"]),
        )


@dataclass(frozen=True)
class AdfReport:
    statistic: float
    lag_used: int
    critical_value_5pct: float
    critical_values: dict = field(default_factory=dict)
    nobs: int = 0

    @property
    def is_stationary(self) -> bool:
        return bool(self.statistic < self.critical_value_5pct)


@dataclass(frozen=True)
class ArFit:
    order_p: int
    intercept: float
    coefficients: tuple
    residual_variance: float

    def __post_init__(self):
        if len(self.coefficients) != self.order_p:
            raise SeriesError("coefficient count must equal order_p")

    def predict_next(self, history) -> float:
        h = np.asarray(history, dtype=np.float64)
        lags = h[::-1][: self.order_p]
        return float(self.intercept + np.dot(self.coefficients, lags))


def difference(series: Series, order: int = 1) -> tuple[Series, TransformStack]:
    """Apply first differencing ``order`` times.

    Returns the differenced series and a stack holding the first value of
    each pass, which :func:`integrate` needs to rebuild the input.

    Each difference is taken against the running reconstruction that
    :func:`integrate` will produce rather than the raw previous value, so
    rounding error is fed back instead of compounding over the series.
    The output equals the textbook difference up to a few ulps and the
    round trip is accurate to about one ulp of the input.
    """
    if order < 1:
        raise SeriesError("differencing order must be positive")
    if len(series) <= order:
        raise SeriesError("series too short for differencing order")
    x = series.values
    recon = [None] * order  # latest rebuilt value of each level 0..order-1
    initials = []
    out = np.empty((len(x) - order,) + x.shape[1:])
    for i, row in enumerate(x):
        top = min(i, order)
        t = row
        for k in range(top):
            t = t - recon[k]
        if i < order:
            initials.append(np.array(t) if x.ndim == 2 else float(t))
            recon[i] = t
        else:
            out[i - order] = t
        # replay the accumulation integrate() performs
        nxt = t
        for k in range(top - 1, -1, -1):
            recon[k] = recon[k] + nxt
            nxt = recon[k]
    return Series(out, name=series.name), TransformStack(order, tuple(initials))


def integrate(diffed: Series, stack: TransformStack) -> Series:
    """Inverse of :func:`difference` using the stored per-pass initials."""
    if stack.diff_order < 1:
        raise SeriesError("transform stack records no differencing")
    if len(stack.diff_initials) != stack.diff_order:
        raise SeriesError("inconsistent differencing initials count")
    x = diffed.values
    for init in reversed(stack.diff_initials):
        init = np.asarray(init, dtype=np.float64)
        if init.shape != x.shape[1:]:
            raise SeriesError("differencing initials do not match series channels")
        # strictly sequential accumulation; difference() relies on this order
        x = np.add.accumulate(np.concatenate([init[None, ...], x], axis=0), axis=0)
    return Series(x, name=diffed.name)


def integrate_forecast(last_levels, diffs: np.ndarray) -> np.ndarray:
    """Rebuild level forecasts from predicted ``d``-th differences.

    ``last_levels`` holds the final ``d`` observed values of the undifferenced
    series (oldest first); ``diffs`` the predicted ``d``-th differences of the
    following points.
    """
    last = np.asarray(last_levels, dtype=np.float64)
    d = last.shape[0]
    out = np.asarray(diffs, dtype=np.float64)
    if d == 0:
        return out.copy()
    # tails[k]: last observed value of the k-th difference of the history
    tails = []
    cur = last
    for _ in range(d):
        tails.append(cur[-1])
        cur = cur[1:] - cur[:-1]
    for k in reversed(range(d)):
        out = tails[k] + np.cumsum(out)
    return out


def normalize_minmax(series: Series) -> tuple[Series, TransformStack]:
    if len(series) < 2:
        raise SeriesError("normalization needs at least two observations")
    x = series.values
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    if np.any(hi <= lo):
        raise DegenerateSeriesError(f"zero range in series {series.name!r}")
    y = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
    if x.ndim == 1:
        lo, hi = float(lo), float(hi)
    return Series(y, name=series.name), TransformStack(norm_min=lo, norm_max=hi)


def denormalize(values, stack: TransformStack) -> np.ndarray:
    if not stack.normalized:
        return np.asarray(values, dtype=np.float64).copy()
    lo = np.asarray(stack.norm_min)
    hi = np.asarray(stack.norm_max)
    return np.asarray(values, dtype=np.float64) * (hi - lo) + lo


# MacKinnon (2010) response-surface coefficients, constant-only regression,
# one variable: cv(T) = b0 + b1/T + b2/T**2 + b3/T**3
_MACKINNON_C = {
    "1%": (-3.43035, -6.5393, -16.786, -79.433),
    "5%": (-2.86154, -2.8903, -4.234, -40.040),
    "10%": (-2.56677, -1.5384, -2.809, 0.0),
}


def mackinnon_critical_values(nobs: int) -> dict[str, float]:
    t = float(nobs)
    return {k: b[0] + b[1] / t + b[2] / t**2 + b[3] / t**3 for k, b in _MACKINNON_C.items()}


def default_adf_lag(n: int) -> int:
    return int(math.floor((n - 1) ** (1.0 / 3.0)))


def _univariate(series: Series) -> np.ndarray:
    if series.channel_count != 1:
        raise SeriesError("operation requires a univariate series")
    return series.values


def adf_test(series: Series, max_lag: int | None = None) -> AdfReport:
    """Augmented Dickey-Fuller test with a constant and ``max_lag`` lagged differences.

    A series whose first differences are all identical carries no noise to
    regress on. A non-zero drift of that kind (a pure ramp) is reported as
    non-stationary; a constant series is rejected as degenerate.
    """
    y = _univariate(series)
    n = len(y)
    lag = default_adf_lag(n) if max_lag is None else int(max_lag)
    if lag < 0:
        raise SeriesError("max_lag must be non-negative")
    if n < lag + 10:
        raise SeriesError(f"series of length {n} too short for ADF with lag {lag}")

    dy = np.diff(y)
    nobs = len(dy) - lag
    crit = mackinnon_critical_values(nobs)
    scale = max(np.max(np.abs(y)), 1.0)
    if np.ptp(dy) <= 1e-12 * scale:
        if abs(dy[0]) <= 1e-12 * scale:
            raise DegenerateSeriesError("degenerate series: constant values")
        return AdfReport(math.inf, lag, crit["5%"], crit, nobs)

    cols = [y[lag:-1]]
    for k in range(1, lag + 1):
        cols.append(dy[lag - k : len(dy) - k])
    cols.append(np.ones(nobs))
    X = np.column_stack(cols)
    target = dy[lag:]

    beta, _, rank, sv = np.linalg.lstsq(X, target, rcond=None)
    if rank < X.shape[1] or sv[-1] <= sv[0] * 1e-12:
        raise DegenerateSeriesError("degenerate series: singular ADF regression")
    resid = target - X @ beta
    dof = nobs - X.shape[1]
    if dof <= 0:
        raise SeriesError("not enough observations for ADF regression")
    sigma2 = resid @ resid / dof
    xtx_inv = np.linalg.inv(X.T @ X)
    se = math.sqrt(sigma2 * xtx_inv[0, 0])
    if se == 0.0:
        raise DegenerateSeriesError("degenerate series: zero residual variance")
    return AdfReport(float(beta[0] / se), lag, crit["5%"], crit, nobs)


def select_difference_order(series: Series, max_d: int = 2, max_lag: int | None = None) -> int:
    """Smallest differencing order in ``0..max_d`` that passes the ADF test."""
    if not 1 <= max_d <= 2:
        raise SeriesError("max_d must be 1 or 2")
    current = series
    for d in range(max_d + 1):
        if d > 0:
            current, _ = difference(current, 1)
        if adf_test(current, max_lag).is_stationary:
            return d
    return max_d


def fit_ar(series: Series, order_p: int) -> ArFit:
    """Least-squares AR(p) with intercept.

    A rank-deficient design is accepted only when it is fit exactly (e.g. a
    constant series), in which case the minimum-norm solution is returned.
    """
    y = _univariate(series)
    if order_p < 1:
        raise SeriesError("order_p must be positive")
    if len(y) < order_p + 2:
        raise SeriesError("series too short for AR order")
    n = len(y)
    X = np.column_stack([np.ones(n - order_p)] + [y[order_p - i : n - i] for i in range(1, order_p + 1)])
    target = y[order_p:]
    beta, _, rank, _ = np.linalg.lstsq(X, target, rcond=None)
    resid = target - X @ beta
    rv = float(np.mean(resid**2))
    if rank < X.shape[1] and rv > 1e-24 * max(1.0, float(np.mean(target**2))):
        raise SeriesError("singular normal equations in AR fit")
    return ArFit(order_p, float(beta[0]), tuple(float(b) for b in beta[1:]), rv)


def exponential_smoothing(values, alpha: float = 0.3) -> np.ndarray:
    """Simple exponential smoothing with ``S_0 = x_0``."""
    if not 0.0 < alpha <= 1.0:
        raise SeriesError("alpha must lie in (0, 1]")
    x = np.asarray(values, dtype=np.float64)
    s = np.empty_like(x)
    s[0] = x[0]
    for t in range(1, len(x)):
        s[t] = alpha * x[t] + (1.0 - alpha) * s[t - 1]
    return s
