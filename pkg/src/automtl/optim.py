"""Adam, global-norm clipping, and the primary/automated learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import numerics as nx
from .errors import DimensionMismatch, EpochOutOfRange, NoLoss, NonFiniteGradient
from .numerics import Tensor


@dataclass(frozen=True)
class ScheduleState:
    lr_actual: float
    total_epochs: int
    epoch: int = 0

    def __post_init__(self):
        if not self.lr_actual > 0:
            raise ValueError("lr_actual must be positive")
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be >= 1")


def lr_schedule(s: ScheduleState) -> tuple[float, float]:
    """Linear hand-over from the automated task to the primary task.

    ``lr_prim`` grows from 0 at epoch 0 to ``lr_actual`` at the last epoch;
    ``lr_auto`` is the remainder, computed by subtraction so the pair always
    sums to ``lr_actual``.
    """
    if not 0 <= s.epoch <= s.total_epochs:
        raise EpochOutOfRange(f"epoch {s.epoch} outside [0, {s.total_epochs}]")
    lr_prim = s.epoch * (s.lr_actual / s.total_epochs)
    lr_auto = s.lr_actual - lr_prim
    if lr_prim + lr_auto != s.lr_actual:
        lr_prim, lr_auto = _exact_pair(lr_prim, lr_auto, s.lr_actual)
    return lr_prim, lr_auto


def _ulp_steps(x: float, n: int):
    yield x
    up = down = x
    for _ in range(n):
        up, down = math.nextafter(up, math.inf), math.nextafter(down, -math.inf)
        yield up
        yield down


def _exact_pair(prim: float, auto: float, total: float, reach: int = 4) -> tuple[float, float]:
    # rounding of the re-added pair can skip the target; move each side by a few ulps
    for p in _ulp_steps(prim, reach):
        for a in _ulp_steps(auto, reach):
            if p + a == total and p >= 0 and a >= 0:
                return p, a
    return prim, auto


def task_weights(schedule: ScheduleState | None) -> tuple[float, float]:
    """Loss coefficients (primary, automated); ``None`` means fixed equal weighting."""
    if schedule is None:
        return 1.0, 1.0
    lr_prim, lr_auto = lr_schedule(schedule)
    return lr_prim / schedule.lr_actual, lr_auto / schedule.lr_actual


def apply_task_weights(primary: Tensor | None, automated: Sequence[Tensor] = (),
                       schedule: ScheduleState | tuple[float, float] | None = None) -> Tensor:
    """Combine per-task scalar losses into the single objective that gets backpropagated.

    ``schedule`` may be a :class:`ScheduleState`, an explicit
    ``(primary_weight, automated_weight)`` pair, or ``None`` for a plain sum.
    """
    if primary is None and not automated:
        raise NoLoss("no task losses to combine")
    if isinstance(schedule, tuple):
        w_prim, w_auto = schedule
    else:
        w_prim, w_auto = task_weights(schedule)
    terms = []
    if primary is not None:
        terms.append(primary if w_prim == 1.0 else nx.scale(primary, w_prim))
    for loss in automated:
        terms.append(loss if w_auto == 1.0 else nx.scale(loss, w_auto))
    total = terms[0]
    for t in terms[1:]:
        total = nx.add(total, t)
    return total


def global_norm(grads: Iterable[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads))


def clip_global_norm(grads: Sequence[np.ndarray], max_norm: float) -> float:
    """Rescale ``grads`` in place so their joint L2 norm is at most ``max_norm``.

    Returns the scale that was applied (1.0 when already within bounds).
    """
    if not max_norm > 0:
        raise ValueError("max_norm must be positive")
    for g in grads:
        if not np.isfinite(g).all():
            raise NonFiniteGradient("gradient contains NaN or Inf")
    norm = global_norm(grads)
    if norm <= max_norm:
        return 1.0
    s = max_norm / norm
    for g in grads:
        g *= s
    # guard the last ulp so the post-clip norm never exceeds the bound
    while global_norm(grads) > max_norm:
        for g in grads:
            g *= 1.0 - 1e-15
        s *= 1.0 - 1e-15
    return s


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: Mapping[str, Tensor],
              grads: Mapping[str, np.ndarray] | None = None) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    ``grads`` defaults to each parameter's ``.grad``; a missing grad counts as zero.
    """
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads[name] if grads is not None else p.grad
        if g is None:
            g = np.zeros(p.shape)
        if g.shape != p.shape:
            raise DimensionMismatch(f"grad for {name} has shape {g.shape}, param {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros(p.shape)
            state.v[name] = np.zeros(p.shape)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if state.lr != 0.0:
            p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Adam:
    """Small stateful wrapper: zero grads, clip, step."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3, clip_norm: float | None = 1.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.clip_norm = clip_norm
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        self.last_scale = 1.0

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def grads(self) -> dict[str, np.ndarray]:
        for p in self.params.values():
            if p.grad is None:
                p.grad = np.zeros(p.shape)
        return {k: p.grad for k, p in self.params.items()}

    def step(self) -> None:
        grads = self.grads()
        if self.clip_norm is not None:
            self.last_scale = clip_global_norm(list(grads.values()), self.clip_norm)
        adam_step(self.state, self.params, grads)
