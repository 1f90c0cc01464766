import math

import numpy as np
import pytest

from automtl import numerics as nx
from automtl.errors import DimensionMismatch, EmptySequence, MalformedHeader
from automtl.layers import (
    DenseParams,
    LstmParams,
    LstmState,
    dense_forward,
    init_dense,
    init_lstm,
    init_params,
    load_params,
    lstm_param_count,
    lstm_step,
    lstm_unroll,
    save_params,
    zero_state,
)
from automtl.numerics import Tape, Tensor


def zero_lstm(i, h):
    return LstmParams(i, h, Tensor(np.zeros((i + h, 4 * h))), Tensor(np.zeros((1, 4 * h))))


def test_init_deterministic_and_seed_sensitive():
    spec = {"l": ("lstm", 5, 3), "d": ("dense", 3, 2, "softmax")}
    a, b, c = init_params(spec, 1), init_params(spec, 1), init_params(spec, 2)
    for name in spec:
        for k in ("W", "b"):
            np.testing.assert_array_equal(a[name].tensors()[k].data, b[name].tensors()[k].data)
    assert not np.array_equal(a["l"].W.data, c["l"].W.data)


def test_init_glorot_range_and_biases(rng):
    p = init_lstm(6, 4, rng)
    r = math.sqrt(6 / (10 + 16))
    assert np.abs(p.W.data).max() <= r
    np.testing.assert_array_equal(p.b.data[0, p.gate_slice("forget")], 1.0)
    other = np.delete(p.b.data[0], np.arange(4, 8))
    assert not other.any()
    d = init_dense(3, 2, rng)
    assert not d.b.data.any()


def test_rtmr_lstm_param_count():
    # closed form 4 * ((300 + 512) * 512 + 512)
    assert 4 * ((300 + 512) * 512 + 512) == 1_665_024
    p = init_lstm(300, 512, np.random.default_rng(0))
    assert p.num_params() == 1_665_024 == lstm_param_count(300, 512)


def test_lstm_param_shape_checked():
    with pytest.raises(DimensionMismatch):
        LstmParams(3, 2, Tensor(np.zeros((4, 8))), Tensor(np.zeros((1, 8))))


def test_lstm_step_zero_params():
    p = zero_lstm(3, 2)
    s = lstm_step(p, Tensor(np.random.default_rng(0).normal(size=(4, 3))), zero_state(4, 2))
    assert not s.h.data.any() and not s.c.data.any()
    assert s.h.shape == s.c.shape == (4, 2)


def test_lstm_step_saturated_forget_gate():
    p = zero_lstm(1, 1)
    p.b.data[0, 1] = 100.0
    s = lstm_step(p, Tensor([[0.5]]), LstmState(Tensor([[0.0]]), Tensor([[1.0]])))
    # scalar reference: c' = sigma(100)*1 + sigma(0)*tanh(0); h' = sigma(0)*tanh(c')
    sig = lambda z: 1 / (1 + math.exp(-z))
    c_ref = sig(100.0) * 1.0 + sig(0.0) * math.tanh(0.0)
    h_ref = sig(0.0) * math.tanh(c_ref)
    assert s.c.item() == pytest.approx(c_ref, abs=1e-15)
    assert s.h.item() == pytest.approx(h_ref, abs=1e-15)
    assert s.h.item() == pytest.approx(0.38079708, abs=1e-8)


def test_lstm_step_matches_hand_evaluation(rng):
    p = init_lstm(3, 2, rng)
    p.b.data[:] = rng.normal(size=p.b.shape)
    x, h, c = rng.normal(size=(1, 3)), rng.normal(size=(1, 2)) * 0.5, rng.normal(size=(1, 2))
    z = np.concatenate([x, h], axis=1) @ p.W.data + p.b.data
    sig = lambda v: 1 / (1 + np.exp(-v))
    i, f, g, o = sig(z[:, 0:2]), sig(z[:, 2:4]), np.tanh(z[:, 4:6]), sig(z[:, 6:8])
    c2 = f * c + i * g
    s = lstm_step(p, Tensor(x), LstmState(Tensor(h), Tensor(c)))
    np.testing.assert_allclose(s.c.data, c2, rtol=1e-13)
    np.testing.assert_allclose(s.h.data, o * np.tanh(c2), rtol=1e-13)


def test_lstm_step_dimension_mismatch(rng):
    with pytest.raises(DimensionMismatch):
        lstm_step(init_lstm(3, 2, rng), Tensor(np.ones((1, 4))), zero_state(1, 2))


def test_unroll_length_one_equals_step(rng):
    p = init_lstm(3, 2, rng)
    x = Tensor(rng.normal(size=(2, 3)))
    a = lstm_unroll(p, [x])[0]
    b = lstm_step(p, x, zero_state(2, 2))
    np.testing.assert_array_equal(a.h.data, b.h.data)


def test_unroll_zero_params_all_zero(rng):
    states = lstm_unroll(zero_lstm(3, 2), [Tensor(rng.normal(size=(2, 3))) for _ in range(4)])
    assert all(not s.h.data.any() for s in states)


def test_unroll_empty():
    with pytest.raises(EmptySequence):
        lstm_unroll(zero_lstm(1, 1), [])


def test_bptt_first_input_gradient(rng):
    p = init_lstm(3, 4, rng)
    x0 = Tensor(rng.normal(size=(2, 3)))
    rest = [Tensor(rng.normal(size=(2, 3))) for _ in range(5)]
    w = rng.normal(size=(2, 4))

    def loss():
        return nx.sum_all(nx.mul(lstm_unroll(p, [x0] + rest)[-1].h, w))

    rep = nx.grad_check(loss, {"x0": x0, "W": p.W}, tolerance=1e-4)
    assert rep.passed, rep.max_rel_error


@pytest.mark.parametrize("T", [1, 8, 64])
def test_long_unroll_grads_finite_and_h_bounded(T, rng):
    p = init_lstm(3, 4, rng)
    p.W.data *= 5
    xs = [Tensor(rng.normal(size=(2, 3)) * 10) for _ in range(T)]
    with Tape() as tape:
        states = lstm_unroll(p, xs)
        loss = nx.sum_all(states[-1].h)
    tape.backward(loss)
    assert np.isfinite(p.W.grad).all()
    assert all((np.abs(s.h.data) < 1).all() for s in states)


def test_dense_forward_cases(rng):
    x = Tensor(rng.normal(size=(3, 4)))
    ident = DenseParams(Tensor(np.eye(4)), Tensor(np.zeros((1, 4))), "identity")
    np.testing.assert_array_equal(dense_forward(ident, x).data, x.data)
    soft = DenseParams(Tensor(np.zeros((4, 3))), Tensor(np.zeros((1, 3))), "softmax")
    np.testing.assert_allclose(dense_forward(soft, x).data, np.full((3, 3), 1 / 3))
    th = init_dense(4, 5, rng, "tanh")
    out = dense_forward(th, Tensor(rng.normal(size=(3, 4)) * 100)).data
    assert (np.abs(out) <= 1).all()
    with pytest.raises(DimensionMismatch):
        dense_forward(th, Tensor(np.ones((1, 3))))


def test_param_file_roundtrip(tmp_path, rng):
    params = {"a.W": Tensor(rng.normal(size=(3, 4))), "a.b": Tensor(rng.normal(size=(1, 4)))}
    path = tmp_path / "p.bin"
    save_params(path, params)
    back = load_params(path)
    assert list(back) == list(params)
    for k in params:
        np.testing.assert_array_equal(back[k], params[k].data)
    head = path.read_bytes().split(b"end\n")[0].decode()
    assert head.splitlines()[2] == "a.W 3 4 0"
    assert head.splitlines()[3] == "a.b 1 4 96"


def test_param_file_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"hello\n")
    with pytest.raises(MalformedHeader):
        load_params(bad)
