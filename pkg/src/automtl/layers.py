"""LSTM cell and unrolling, dense heads, initialization and parameter files.

Gate columns of the fused LSTM weight are ordered input, forget,
cell-candidate, output.  The weight's rows take ``[x ‖ h]``.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import numerics as nx
from .errors import DimensionMismatch, EmptySequence, MalformedHeader
from .numerics import Tensor

GATES = ("input", "forget", "cell", "output")
ACTIVATIONS = ("tanh", "softmax", "identity")


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    r = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=(fan_in, fan_out))


def param_rng(seed: int, name: str) -> np.random.Generator:
    """Per-parameter stream so equally named layers init identically across models."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


@dataclass
class LstmParams:
    input_size: int
    hidden_size: int
    W: Tensor
    b: Tensor

    def __post_init__(self):
        rows = self.input_size + self.hidden_size
        if self.W.shape != (rows, 4 * self.hidden_size) or self.b.shape != (1, 4 * self.hidden_size):
            raise DimensionMismatch(
                f"LSTM({self.input_size}->{self.hidden_size}) got W{self.W.shape} b{self.b.shape}"
            )
        assert self.num_params() == lstm_param_count(self.input_size, self.hidden_size)

    def tensors(self) -> dict[str, Tensor]:
        return {"W": self.W, "b": self.b}

    def num_params(self) -> int:
        return self.W.data.size + self.b.data.size

    def gate_slice(self, gate: str) -> slice:
        i = GATES.index(gate)
        return slice(i * self.hidden_size, (i + 1) * self.hidden_size)


@dataclass
class DenseParams:
    W: Tensor
    b: Tensor
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.b.shape != (1, self.W.cols):
            raise DimensionMismatch(f"dense W{self.W.shape} with b{self.b.shape}")

    @property
    def in_size(self) -> int:
        return self.W.rows

    @property
    def out_size(self) -> int:
        return self.W.cols

    def tensors(self) -> dict[str, Tensor]:
        return {"W": self.W, "b": self.b}

    def num_params(self) -> int:
        return self.W.data.size + self.b.data.size


@dataclass
class LstmState:
    h: Tensor
    c: Tensor


def lstm_param_count(input_size: int, hidden_size: int) -> int:
    return 4 * ((input_size + hidden_size) * hidden_size + hidden_size)


def dense_param_count(in_size: int, out_size: int) -> int:
    return in_size * out_size + out_size


def init_lstm(input_size: int, hidden_size: int, rng: np.random.Generator,
              forget_bias: float = 1.0) -> LstmParams:
    if input_size < 1 or hidden_size < 1:
        raise ValueError("LSTM sizes must be >= 1")
    W = glorot_uniform(input_size + hidden_size, 4 * hidden_size, rng)
    b = np.zeros((1, 4 * hidden_size))
    b[0, hidden_size : 2 * hidden_size] = forget_bias
    return LstmParams(input_size, hidden_size, Tensor(W, requires_grad=True), Tensor(b, requires_grad=True))


def init_dense(in_size: int, out_size: int, rng: np.random.Generator,
               activation: str = "tanh") -> DenseParams:
    if in_size < 1 or out_size < 1:
        raise ValueError("dense sizes must be >= 1")
    W = glorot_uniform(in_size, out_size, rng)
    return DenseParams(Tensor(W, requires_grad=True), Tensor(np.zeros((1, out_size)), requires_grad=True), activation)


def init_params(spec: Mapping[str, tuple], seed: int) -> dict:
    """Materialize named layers from ``{name: ("lstm", in, hidden) | ("dense", in, out, act)}``.

    Each layer draws from its own stream keyed on ``(seed, name)``.
    """
    out = {}
    for name, shape in spec.items():
        kind, *dims = shape
        rng = param_rng(seed, name)
        if kind == "lstm":
            out[name] = init_lstm(dims[0], dims[1], rng)
        elif kind == "dense":
            out[name] = init_dense(dims[0], dims[1], rng, *(dims[2:] or ["tanh"]))
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
    return out


def zero_state(batch: int, hidden: int) -> LstmState:
    return LstmState(Tensor(np.zeros((batch, hidden))), Tensor(np.zeros((batch, hidden))))


def lstm_step(p: LstmParams, x: Tensor, s: LstmState) -> LstmState:
    if x.cols != p.input_size or s.h.cols != p.hidden_size or s.h.rows != x.rows:
        raise DimensionMismatch(
            f"lstm_step: x{x.shape}, h{s.h.shape} for LSTM({p.input_size}->{p.hidden_size})"
        )
    H = p.hidden_size
    gates = nx.add(nx.matmul(nx.concat_cols([x, s.h]), p.W), p.b)
    i = nx.sigmoid(nx.slice_cols(gates, 0, H))
    f = nx.sigmoid(nx.slice_cols(gates, H, 2 * H))
    g = nx.tanh(nx.slice_cols(gates, 2 * H, 3 * H))
    o = nx.sigmoid(nx.slice_cols(gates, 3 * H, 4 * H))
    c = nx.add(nx.mul(f, s.c), nx.mul(i, g))
    h = nx.mul(o, nx.tanh(c))
    return LstmState(h, c)


def lstm_unroll(p: LstmParams, xs: Sequence[Tensor], s0: LstmState | None = None) -> list[LstmState]:
    if len(xs) == 0:
        raise EmptySequence("cannot unroll over an empty sequence")
    batch = xs[0].rows
    if any(x.shape != xs[0].shape for x in xs):
        raise DimensionMismatch("sequence steps must share one shape")
    s = s0 if s0 is not None else zero_state(batch, p.hidden_size)
    states = []
    for x in xs:
        s = lstm_step(p, x, s)
        states.append(s)
    return states


def dense_forward(p: DenseParams, x: Tensor) -> Tensor:
    if x.cols != p.in_size:
        raise DimensionMismatch(f"dense expects {p.in_size} inputs, got {x.cols}")
    z = nx.add(nx.matmul(x, p.W), p.b)
    if p.activation == "tanh":
        return nx.tanh(z)
    if p.activation == "softmax":
        return nx.softmax_rows(z)
    return z


# ------------------------------------------------------- parameter files
#
# Layout:
#   automtl-params 1\n
#   <n>\n
#   n lines "<name> <rows> <cols> <byte offset>"\n
#   end\n
#   raw float64 little-endian payload; offsets are relative to payload start

MAGIC = "automtl-params 1"


def save_params(path: str | Path, params: Mapping[str, Tensor]) -> None:
    names = list(params)
    lines = [MAGIC, str(len(names))]
    offset = 0
    for name in names:
        if any(c.isspace() for c in name):
            raise ValueError(f"parameter names may not contain whitespace: {name!r}")
        r, c = params[name].shape
        lines.append(f"{name} {r} {c} {offset}")
        offset += r * c * 8
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        for name in names:
            fh.write(np.ascontiguousarray(params[name].data, dtype="<f8").tobytes())


def load_params(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    pos = 0

    def readline():
        nonlocal pos
        end = raw.index(b"\n", pos)
        line = raw[pos:end].decode("utf-8")
        pos = end + 1
        return line

    try:
        if readline() != MAGIC:
            raise MalformedHeader(f"{path}: not a parameter file")
        n = int(readline())
        entries = []
        for _ in range(n):
            name, r, c, off = readline().split()
            entries.append((name, int(r), int(c), int(off)))
        if readline() != "end":
            raise MalformedHeader(f"{path}: manifest not terminated")
    except ValueError as exc:
        if isinstance(exc, MalformedHeader):
            raise
        raise MalformedHeader(f"{path}: bad manifest ({exc})") from None
    payload = raw[pos:]
    out = {}
    for name, r, c, off in entries:
        chunk = payload[off : off + r * c * 8]
        if len(chunk) != r * c * 8:
            raise MalformedHeader(f"{path}: truncated payload for {name}")
        out[name] = np.frombuffer(chunk, dtype="<f8").reshape(r, c).astype(np.float64)
    return out
