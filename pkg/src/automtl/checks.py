"""Finite-difference verification suite behind ``automtl gradcheck``."""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import numerics as nx
from .corpus import AutoTarget, Batch
from .layers import LstmState, dense_forward, init_dense, init_lstm, lstm_step, lstm_unroll
from .models import ModelSpec, TaskSpec, automated_task, build_model, forward
from .numerics import GradCheckReport, Tensor, grad_check

HIDDEN, INPUT, STEPS, BATCH = 4, 3, 5, 2


def _leaf(rng, *shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _op_cases(rng) -> dict[str, tuple[Callable[[], Tensor], dict]]:
    a, b = _leaf(rng, 3, 4), _leaf(rng, 4, 2)
    c, d = _leaf(rng, 3, 4), _leaf(rng, 1, 4)
    logits = _leaf(rng, 4, 5)
    labels = rng.integers(5, size=4)
    target = rng.uniform(-1, 1, size=(3, 4))
    idx = np.array([2, 0, 2, 1])
    w = rng.uniform(-1, 1, size=(3, 4))

    def weighted(t):
        return nx.sum_all(nx.mul(t, Tensor(rng_const(t.shape))))

    return {
        "matmul": (lambda: weighted(nx.matmul(a, b)), {"a": a, "b": b}),
        "add(broadcast)": (lambda: weighted(nx.add(c, d)), {"c": c, "d": d}),
        "sub": (lambda: weighted(nx.sub(a, c)), {"a": a, "c": c}),
        "mul": (lambda: weighted(nx.mul(a, c)), {"a": a, "c": c}),
        "scale": (lambda: weighted(nx.scale(a, -1.7)), {"a": a}),
        "sigmoid": (lambda: weighted(nx.sigmoid(a)), {"a": a}),
        "tanh": (lambda: weighted(nx.tanh(a)), {"a": a}),
        "concat_cols": (lambda: weighted(nx.concat_cols([a, c])), {"a": a, "c": c}),
        "slice_cols": (lambda: weighted(nx.slice_cols(a, 1, 3)), {"a": a}),
        "concat_rows": (lambda: weighted(nx.concat_rows([a, c])), {"a": a, "c": c}),
        "take_rows": (lambda: weighted(nx.take_rows(a, idx)), {"a": a}),
        "softmax+cross_entropy": (lambda: nx.cross_entropy(nx.softmax_rows(logits), labels), {"logits": logits}),
        "softmax_rows": (lambda: weighted(nx.softmax_rows(logits)), {"logits": logits}),
        "mse": (lambda: nx.mse(nx.mul(a, Tensor(w)), Tensor(target)), {"a": a}),
    }


def rng_const(shape, seed=1234):
    return np.random.default_rng([seed, *shape]).uniform(-1, 1, size=shape)


def _lstm_cases(rng) -> dict[str, tuple[Callable[[], Tensor], dict]]:
    p = init_lstm(INPUT, HIDDEN, rng)
    p.b.data += rng.uniform(-0.5, 0.5, size=p.b.shape)
    head = init_dense(HIDDEN, 2, rng, "tanh")
    x0 = _leaf(rng, BATCH, INPUT)
    xs = [Tensor(rng.uniform(-1, 1, size=(BATCH, INPUT))) for _ in range(STEPS - 1)]
    h0, c0 = _leaf(rng, BATCH, HIDDEN, lo=-0.5, hi=0.5), _leaf(rng, BATCH, HIDDEN, lo=-0.5, hi=0.5)

    def step():
        s = lstm_step(p, x0, LstmState(h0, c0))
        return nx.sum_all(nx.mul(nx.add(s.h, s.c), Tensor(rng_const(s.h.shape))))

    def unroll():
        states = lstm_unroll(p, [x0] + xs)
        return nx.sum_all(nx.mul(dense_forward(head, states[-1].h), Tensor(rng_const((BATCH, 2)))))

    return {
        "lstm_step": (step, {"W": p.W, "b": p.b, "x": x0, "h0": h0, "c0": c0}),
        f"lstm_unroll(T={STEPS})": (unroll, {"W": p.W, "b": p.b, "x_first": x0, "head.W": head.W}),
    }


def tiny_batch(spec: ModelSpec, rng, lengths=(STEPS, 3)) -> Batch:
    lengths = np.array(lengths)
    T, B = int(lengths.max()), lengths.size
    mask = np.arange(T)[:, None] < lengths[None, :]
    if spec.primary.kind == "classification":
        primary = rng.integers(spec.primary.output_size, size=B)
    else:
        primary = rng.uniform(-0.5, 0.5, size=(B, spec.primary.output_size))
    auto = {}
    for t in spec.automated:
        nxt = mask.copy()
        nxt[lengths - 1, np.arange(B)] = False
        if t.kind == "char_lm":
            auto[t.name] = AutoTarget(rng.integers(t.output_size, size=(T, B)), nxt)
        elif t.kind == "word_lm":
            auto[t.name] = AutoTarget(rng.uniform(-0.5, 0.5, size=(T, B, t.output_size)), nxt)
        else:
            auto[t.name] = AutoTarget(rng.uniform(-0.5, 0.5, size=(B, t.output_size)), np.ones(B, dtype=bool))
    return Batch(rng.uniform(-1, 1, size=(T, B, spec.input_size)), lengths, mask, primary, auto)


def tiny_specs() -> dict[str, ModelSpec]:
    cls = TaskSpec("primary", "classification", 3)
    reg = TaskSpec("primary", "vector_regression", 3)
    word = automated_task("next_word", INPUT)
    return {
        "baseline": ModelSpec("baseline", INPUT, HIDDEN, HIDDEN, cls),
        "mrnn+next_word": ModelSpec("mrnn", INPUT, HIDDEN, HIDDEN, cls, (word,)),
        "crnn+next_word": ModelSpec("crnn", INPUT, HIDDEN, HIDDEN, cls, (word,)),
        "mrnn+next_char/regression": ModelSpec("mrnn", INPUT, HIDDEN, HIDDEN, reg, (automated_task("next_char", INPUT),)),
        "crnn+missing_word": ModelSpec("crnn", INPUT, HIDDEN, HIDDEN, cls, (automated_task("missing_word", INPUT),)),
    }


def _model_cases(rng) -> dict[str, tuple[Callable[[], Tensor], dict]]:
    cases = {}
    for i, (name, spec) in enumerate(tiny_specs().items()):
        model = build_model(spec, seed=i + 1)
        for layer in model.layers.values():
            layer.b.data += rng.uniform(-0.3, 0.3, size=layer.b.shape)
        batch = tiny_batch(spec, rng)
        weights = (0.7, 0.3) if spec.automated else None
        cases[name] = (lambda m=model, b=batch, w=weights: forward(m, b, w).combined, model.parameters())
    return cases


def run_gradcheck(tolerance: float = 1e-4, seed: int = 0, max_entries: int = 48) -> list[tuple[str, GradCheckReport]]:
    """Check every op, the LSTM cell, a 5-step unroll and each topology at hidden size 4."""
    rng = np.random.default_rng(seed)
    results = []
    for group in (_op_cases, _lstm_cases, _model_cases):
        for name, (fn, leaves) in group(rng).items():
            results.append((name, grad_check(fn, leaves, tolerance=tolerance, max_entries=max_entries, seed=seed)))
    return results
