import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from automtl import numerics as nx
from automtl.errors import EpochOutOfRange, NoLoss, NonFiniteGradient
from automtl.numerics import Tape, Tensor
from automtl.optim import (
    AdamState,
    ScheduleState,
    adam_step,
    apply_task_weights,
    clip_global_norm,
    global_norm,
    lr_schedule,
    task_weights,
)


def test_schedule_endpoints_and_midpoint():
    assert lr_schedule(ScheduleState(0.01, 30, 0)) == (0.0, 0.01)
    assert lr_schedule(ScheduleState(0.01, 30, 30)) == (0.01, 0.0)
    prim, auto = lr_schedule(ScheduleState(0.01, 30, 15))
    assert prim == pytest.approx(0.005, abs=1e-18) and auto == pytest.approx(0.005, abs=1e-18)


def test_schedule_out_of_range():
    with pytest.raises(EpochOutOfRange):
        lr_schedule(ScheduleState(0.01, 10, 11))
    with pytest.raises(EpochOutOfRange):
        lr_schedule(ScheduleState(0.01, 10, -1))


@given(st.floats(1e-6, 1.0), st.integers(1, 200))
def test_schedule_sums_exactly_and_is_monotone(lr, total):
    prev_p, prev_a = -1.0, math.inf
    for e in range(total + 1):
        p, a = lr_schedule(ScheduleState(lr, total, e))
        assert p + a == lr
        assert p >= prev_p and a <= prev_a
        prev_p, prev_a = p, a


def test_clip_examples():
    g = [np.array([3.0]), np.array([4.0])]
    s = clip_global_norm(g, 1.0)
    np.testing.assert_allclose([g[0][0], g[1][0]], [0.6, 0.8], rtol=1e-15)
    assert s == pytest.approx(0.2)
    small = [np.array([0.3])]
    assert clip_global_norm(small, 1.0) == 1.0 and small[0][0] == 0.3
    zero = [np.zeros(3), np.zeros((2, 2))]
    assert clip_global_norm(zero, 1.0) == 1.0 and not zero[0].any()


def test_clip_rejects_nan():
    with pytest.raises(NonFiniteGradient):
        clip_global_norm([np.array([np.nan])], 1.0)


@given(st.integers(0, 10_000), st.floats(-6, 3))
def test_clip_bound_property(seed, log_norm):
    r = np.random.default_rng(seed)
    grads = [r.normal(size=s) for s in [(3, 4), (1, 4), (5,)]]
    target = 10.0 ** log_norm
    k = target / global_norm(grads)
    grads = [g * k for g in grads]
    before = [g.copy() for g in grads]
    clip_global_norm(grads, 1.0)
    assert global_norm(grads) <= 1.0 + 1e-12
    if global_norm(before) <= 1.0:
        for a, b in zip(grads, before):
            np.testing.assert_array_equal(a, b)


def scalar_adam(g_seq, lr, theta=0.0, b1=0.9, b2=0.999, eps=1e-8):
    """Reference scalar Adam written independently of the array version."""
    m = v = 0.0
    out = []
    for t, g in enumerate(g_seq, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1**t)
        vh = v / (1 - b2**t)
        theta = theta - lr * mh / (math.sqrt(vh) + eps)
        out.append(theta)
    return out


def test_adam_zero_grad_no_move():
    p = {"w": Tensor([[1.0, -2.0]])}
    adam_step(AdamState(lr=0.1), p, {"w": np.zeros((1, 2))})
    np.testing.assert_array_equal(p["w"].data, [[1.0, -2.0]])


def test_adam_first_step_is_minus_lr():
    p = {"w": Tensor([[0.0]])}
    adam_step(AdamState(lr=0.001), p, {"w": np.array([[1.0]])})
    assert p["w"].item() == pytest.approx(-0.001, rel=1e-7)


def test_adam_matches_scalar_reference():
    ref = scalar_adam([0.5] * 5, lr=0.01)
    p = {"w": Tensor([[0.0]])}
    st_ = AdamState(lr=0.01)
    for t in range(5):
        adam_step(st_, p, {"w": np.array([[0.5]])})
        assert abs(p["w"].item() - ref[t]) <= 1e-12
    assert st_.t == 5


def test_adam_lr_zero_updates_moments_only():
    p = {"w": Tensor([[1.0]])}
    st_ = AdamState(lr=0.0)
    adam_step(st_, p, {"w": np.array([[2.0]])})
    assert p["w"].item() == 1.0
    assert st_.m["w"][0, 0] == pytest.approx(0.2) and st_.v["w"][0, 0] == pytest.approx(0.004)


def test_task_weights_endpoints():
    assert task_weights(ScheduleState(0.01, 30, 0)) == (0.0, 1.0)
    assert task_weights(ScheduleState(0.01, 30, 30)) == (1.0, 0.0)
    assert task_weights(ScheduleState(0.01, 30, 15)) == pytest.approx((0.5, 0.5))
    assert task_weights(None) == (1.0, 1.0)


def test_apply_task_weights_values():
    a, b = Tensor([[2.0]]), Tensor([[3.0]])
    assert apply_task_weights(a, [b], ScheduleState(0.01, 30, 0)).item() == 3.0
    assert apply_task_weights(a, [b], ScheduleState(0.01, 30, 30)).item() == 2.0
    assert apply_task_weights(a, [b], None).item() == 5.0
    assert apply_task_weights(a, [b], (0.25, 2.0)).item() == 6.5
    with pytest.raises(NoLoss):
        apply_task_weights(None, [])


def test_combined_gradient_is_weighted_sum_of_solo_gradients(rng):
    w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    x = rng.normal(size=(4, 3))
    y1, y2 = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))

    def losses():
        h = nx.tanh(nx.matmul(x, w))
        return nx.mse(h, y1), nx.mse(h, y2)

    solo = []
    for k in range(2):
        w.zero_grad()
        with Tape() as tape:
            l = losses()[k]
        tape.backward(l)
        solo.append(w.grad.copy())
    w.zero_grad()
    with Tape() as tape:
        l1, l2 = losses()
        comb = apply_task_weights(l1, [l2], (0.3, 0.7))
    tape.backward(comb)
    np.testing.assert_allclose(w.grad, 0.3 * solo[0] + 0.7 * solo[1], rtol=1e-12)
