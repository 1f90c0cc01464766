"""Dense 2-D tensors with define-by-run reverse-mode differentiation.

Every quantity is a 64-bit row-major matrix (batch dimension = rows).  Ops
executed inside an active :class:`Tape` are recorded when any operand
requires a gradient; outside a tape they only compute values, which is what
evaluation code relies on.

    >>> x = Tensor([[1.0, 2.0]], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = sum_all(mul(x, x))
    >>> tape.backward(loss)
    >>> x.grad
    array([[2., 4.]])
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    DetachedLoss,
    DimensionMismatch,
    LabelOutOfRange,
    NonFiniteValue,
    NotScalar,
    SliceOutOfRange,
    ZeroVector,
)

EPS_LOG = 1e-12
EPS_NORM = 1e-12

_ACTIVE: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DimensionMismatch(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def values(self) -> np.ndarray:
        """Row-major flat view of the entries."""
        return self.data.reshape(-1)

    def item(self) -> float:
        if self.data.size != 1:
            raise NotScalar(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Record:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered record of differentiable ops, replayable in reverse."""

    records: list[Record] = field(default_factory=list)
    _index: dict[int, int] = field(default_factory=dict, repr=False)

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, rec: Record) -> None:
        self._index[id(rec.out)] = len(self.records)
        self.records.append(rec)

    def produced(self, t: Tensor) -> bool:
        i = self._index.get(id(t))
        return i is not None and self.records[i].out is t

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def record_op(value: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap ``value`` as an op result and record it on the active tape.

    ``backward_fn`` maps the upstream gradient to one gradient (or None) per
    input.  Public so custom ops can be built and checked with
    :func:`grad_check`.
    """
    if not np.isfinite(value).all():
        raise NonFiniteValue("op produced a non-finite value")
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = value
    out.grad = None
    out.name = None
    out.requires_grad = needs
    if needs:
        tape.append(Record(out, tuple(inputs), backward_fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionMismatch(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------- core ops


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.cols != b.rows:
        raise DimensionMismatch(f"matmul: {a.shape} @ {b.shape}")
    A, B = a.data, b.data
    return record_op(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return record_op(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return record_op(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    A, B = a.data, b.data
    return record_op(
        A * B, (a, b), lambda g: (_unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape))
    )


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return record_op(a.data * c, (a,), lambda g: (g * c,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return record_op(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return record_op(t, (a,), lambda g: (g * (1.0 - t * t),))


def concat_cols(parts: Sequence) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DimensionMismatch("concat_cols of nothing")
    rows = parts[0].rows
    if any(p.rows != rows for p in parts):
        raise DimensionMismatch("concat_cols: row counts differ")
    edges = np.cumsum([0] + [p.cols for p in parts])
    out = np.concatenate([p.data for p in parts], axis=1)
    return record_op(
        out, parts, lambda g: [g[:, edges[i] : edges[i + 1]] for i in range(len(parts))]
    )


def concat_rows(parts: Sequence) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DimensionMismatch("concat_rows of nothing")
    cols = parts[0].cols
    if any(p.cols != cols for p in parts):
        raise DimensionMismatch("concat_rows: column counts differ")
    edges = np.cumsum([0] + [p.rows for p in parts])
    out = np.concatenate([p.data for p in parts], axis=0)
    return record_op(
        out, parts, lambda g: [g[edges[i] : edges[i + 1]] for i in range(len(parts))]
    )


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    if not 0 <= start < stop <= a.cols:
        raise SliceOutOfRange(f"slice [{start}:{stop}] of {a.cols} columns")
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return record_op(a.data[:, start:stop], (a,), bw)


def take_rows(a, index) -> Tensor:
    """Gather rows by integer index (repeats allowed)."""
    a = as_tensor(a)
    idx = np.asarray(index, dtype=np.intp)
    if idx.ndim != 1 or (idx.size and (idx.min() < 0 or idx.max() >= a.rows)):
        raise SliceOutOfRange(f"row index out of range for {a.rows} rows")
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return record_op(a.data[idx], (a,), bw)


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return record_op(np.array([[a.data.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),))


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "concat_cols": lambda *xs: concat_cols(xs),
    "slice_cols": slice_cols,
}


def elementwise(op: str, *operands) -> Tensor:
    """Dispatch by name; ``slice_cols`` takes ``(x, start, stop)``."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*operands)


def softmax_rows(x) -> Tensor:
    x = as_tensor(x)
    if x.cols < 1:
        raise DimensionMismatch("softmax over zero columns")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)
    return record_op(s, (x,), lambda g: (s * (g - (g * s).sum(axis=1, keepdims=True)),))


# ---------------------------------------------------------------- losses


def cross_entropy(probs, labels) -> Tensor:
    """Mean negative log-probability of the labelled class, log argument clamped."""
    probs = as_tensor(probs)
    labels = np.asarray(labels, dtype=np.intp).reshape(-1)
    m, n = probs.shape
    if labels.shape[0] != m:
        raise DimensionMismatch(f"{labels.shape[0]} labels for {m} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= n):
        raise LabelOutOfRange(f"labels must lie in [0, {n})")
    rows = np.arange(m)
    p = probs.data[rows, labels]
    clamped = np.maximum(p, EPS_LOG)
    loss = -np.log(clamped).mean()

    def bw(g):
        full = np.zeros((m, n))
        full[rows, labels] = np.where(p > EPS_LOG, -1.0 / (m * clamped), 0.0)
        return (full * g[0, 0],)

    return record_op(np.array([[loss]]), (probs,), bw)


def mse(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionMismatch(f"mse: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    k = 2.0 / n

    def bw(g):
        d = diff * (k * g[0, 0])
        return (d, -d)

    return record_op(np.array([[np.mean(diff * diff)]]), (pred, target), bw)


def cosine_similarity(u, v) -> float:
    u = np.asarray(u.data if isinstance(u, Tensor) else u, dtype=np.float64).reshape(-1)
    v = np.asarray(v.data if isinstance(v, Tensor) else v, dtype=np.float64).reshape(-1)
    if u.shape != v.shape:
        raise DimensionMismatch(f"cosine of lengths {u.size} and {v.size}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu < EPS_NORM or nv < EPS_NORM:
        raise ZeroVector("cosine similarity of a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


# ---------------------------------------------------------------- backward


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every grad-requiring leaf.

    Grads add onto whatever is already stored, so several backward calls
    (one per task loss, or the same loss twice) sum until zeroed.
    """
    if loss.data.size != 1:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape is None:
        tape = active_tape()
    if tape is None or not tape.produced(loss):
        raise DetachedLoss("loss was not produced on this tape")
    recs = tape.records
    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for i in range(tape._index[id(loss)], -1, -1):
        rec = recs[i]
        g = grads.pop(id(rec.out), None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if tape.produced(inp):
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi
            else:
                inp.grad = np.array(gi, dtype=np.float64) if inp.grad is None else inp.grad + gi


# ---------------------------------------------------------------- grad check


@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_error: dict[str, float]
    checked_entries: dict[str, int]

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance

    def lines(self) -> Iterable[str]:
        for name, err in self.max_rel_error.items():
            flag = "ok" if err <= self.tolerance else "FAIL"
            yield f"  {name:<28} n={self.checked_entries[name]:<5} max_rel={err:.3e} {flag}"


def grad_check(
    loss_fn: Callable[[], Tensor],
    leaves: dict[str, Tensor],
    tolerance: float = 1e-4,
    step: float = 1e-5,
    max_entries: int = 64,
    floor: float = 1e-6,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic grads against central differences on every leaf.

    Leaves larger than ``max_entries`` are checked on a seeded sample of
    entries.  Relative error is ``|a - n| / max(|a|, |n|, floor)``; ``floor``
    keeps near-zero gradients from dividing round-off by round-off.
    """
    for t in leaves.values():
        t.requires_grad = True
        t.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros(t.shape)) for k, t in leaves.items()}

    rng = np.random.default_rng(seed)
    errors, counts = {}, {}
    for name, t in leaves.items():
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        worst = 0.0
        a_flat = analytic[name].reshape(-1)
        for j in idx:
            orig = flat[j]
            flat[j] = orig + step
            up = loss_fn().item()
            flat[j] = orig - step
            down = loss_fn().item()
            flat[j] = orig
            num = (up - down) / (2.0 * step)
            a = a_flat[j]
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), floor))
        errors[name] = worst
        counts[name] = int(idx.size)
    for t in leaves.values():
        t.zero_grad()
    return GradCheckReport(tolerance, errors, counts)
