"""LSTM forecaster parameters, forward pass and binary serialization.

Parameter file layout (little-endian)::

    bytes 0-7    magic b"SMAMLP01"
    bytes 8-19   u32 input_size, u32 hidden_size, u32 output_size
    then float64 segments, row-major, in SEGMENT_ORDER:
        w_ih  (4H, I)   input weights, gate blocks [input, forget, cell, output]
        w_hh  (4H, H)   recurrent weights, same gate blocks
        b     (4H,)     gate biases
        w_out (O, H)    head weights
        b_out (O,)      head bias
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad

MAGIC = b"SMAMLP01"
SEGMENT_ORDER = ("w_ih", "w_hh", "b", "w_out", "b_out")


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    w_ih: np.ndarray
    w_hh: np.ndarray
    b: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray

    def __post_init__(self):
        for name in SEGMENT_ORDER:
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        H = self.hidden_size
        expected = {
            "w_ih": (4 * H, self.input_size),
            "w_hh": (4 * H, H),
            "b": (4 * H,),
            "w_out": (self.output_size, H),
            "b_out": (self.output_size,),
        }
        for name, shape in expected.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ShapeError(f"segment {name}: expected shape {shape}, got {got}")

    @property
    def hidden_size(self) -> int:
        return self.w_hh.shape[1]

    @property
    def input_size(self) -> int:
        return self.w_ih.shape[1]

    @property
    def output_size(self) -> int:
        return self.w_out.shape[0]

    @property
    def size(self) -> int:
        return sum(getattr(self, n).size for n in SEGMENT_ORDER)

    def segments(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in SEGMENT_ORDER}

    @classmethod
    def from_segments(cls, segs: dict) -> "ModelParams":
        return cls(**{n: segs[n] for n in SEGMENT_ORDER})

    def flat(self) -> np.ndarray:
        return np.concatenate([getattr(self, n).ravel() for n in SEGMENT_ORDER])

    def with_flat(self, vec) -> "ModelParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.size,):
            raise ShapeError(f"flat vector of length {vec.size} does not match {self.size} parameters")
        segs, pos = {}, 0
        for n in SEGMENT_ORDER:
            shape = getattr(self, n).shape
            k = int(np.prod(shape))
            segs[n] = vec[pos : pos + k].reshape(shape)
            pos += k
        return ModelParams.from_segments(segs)

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in SEGMENT_ORDER)

    __hash__ = None

    def to_bytes(self) -> bytes:
        header = MAGIC + struct.pack("<III", self.input_size, self.hidden_size, self.output_size)
        return header + self.flat().astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ModelParams":
        if data[:8] != MAGIC:
            raise ValueError("not a parameter file (bad magic)")
        I, H, O = struct.unpack("<III", data[8:20])
        template = zeros(I, H, O)
        vec = np.frombuffer(data[20:], dtype="<f8")
        if vec.size != template.size:
            raise ValueError(f"parameter file holds {vec.size} values, expected {template.size}")
        return template.with_flat(vec.astype(np.float64))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ModelParams":
        return cls.from_bytes(Path(path).read_bytes())


def zeros(input_size: int, hidden_size: int, output_size: int) -> ModelParams:
    H = hidden_size
    return ModelParams(
        np.zeros((4 * H, input_size)),
        np.zeros((4 * H, H)),
        np.zeros(4 * H),
        np.zeros((output_size, H)),
        np.zeros(output_size),
    )


def init_params(input_size: int, hidden_size: int, output_size: int, seed: int) -> ModelParams:
    """Uniform(+-1/sqrt(H)) weights, zero biases except forget gate +1."""
    rng = np.random.default_rng(seed)
    H = hidden_size
    k = 1.0 / np.sqrt(H)
    b = np.zeros(4 * H)
    b[H : 2 * H] = 1.0
    return ModelParams(
        rng.uniform(-k, k, (4 * H, input_size)),
        rng.uniform(-k, k, (4 * H, H)),
        b,
        rng.uniform(-k, k, (output_size, H)),
        np.zeros(output_size),
    )


def _as_input(params: ModelParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None] if params.input_size == 1 else x[None, :]
    elif x.ndim == 2 and params.input_size == 1 and x.shape[-1] != 1:
        # (B, L) batch of univariate windows
        x = x[..., None]
    if x.shape[-1] != params.input_size:
        raise ShapeError(f"segment w_ih expects {params.input_size} input features, got {x.shape[-1]}")
    if x.shape[-2] < 1:
        raise ShapeError("input must contain at least one time step")
    return x


def lstm_forward(
    params: ModelParams, x, tape: ad.Tape | None = None, fused: bool = True, leaves: dict | None = None
) -> ad.Tensor:
    """Run the LSTM over ``x`` from zero state and apply the head to the last hidden state.

    ``x`` is ``(L, I)`` for one window (output ``(O,)``) or ``(B, L, I)`` for a
    batch (output ``(B, O)``); univariate windows may drop the feature axis.
    The result lives on ``tape`` (a fresh one if not given), with ``params``
    registered for :func:`autodiff.backward`. Passing ``leaves`` (segment name
    to tensor) reuses existing tape nodes as the parameters instead.
    """
    x = _as_input(params, x)
    if tape is None:
        tape = ad.Tape()
    p = tape.watch_params(params) if leaves is None else leaves
    H = params.hidden_size
    state_shape = x.shape[:-2] + (H,)
    h = tape.constant(np.zeros(state_shape))
    c = tape.constant(np.zeros(state_shape))
    cell = ad.lstm_cell if fused else ad.lstm_cell_composed
    for t in range(x.shape[-2]):
        xt = tape.constant(x[..., t, :])
        h, c = cell(xt, h, c, p["w_ih"], p["w_hh"], p["b"])
    return ad.add(ad.matmul(h, ad.transpose(p["w_out"])), p["b_out"])


def predict(params: ModelParams, x) -> np.ndarray:
    return lstm_forward(params, x).value


def loss_and_grad(params: ModelParams, inputs, targets) -> tuple[float, ModelParams]:
    """Mean-squared error over a batch of windows and its parameter gradient."""
    tape = ad.Tape()
    out = lstm_forward(params, inputs, tape)
    loss = ad.mse_loss(out, np.asarray(targets, dtype=np.float64).reshape(out.shape))
    grads = ad.backward(tape, loss)
    return float(loss.value), grads
