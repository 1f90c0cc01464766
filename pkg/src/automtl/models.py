"""Baseline two-layer LSTM, shared-body MRNN and cascaded CRNN.

Layer names double as serialization keys::

    baseline  lstm1 -> primary.lstm2 -> primary.fc -> primary.head
    mrnn      lstm1 -> primary.lstm2 -> primary.fc -> primary.head
                    -> <task>.lstm2 -> <task>.fc -> <task>.head
    crnn      lstm1 -> <task>.fc -> <task>.head
              [x ‖ lstm1.h] -> primary.lstm2 -> primary.fc -> primary.head

Equal names are initialized from equal random streams, so a baseline and
an MRNN built with the same seed start with identical primary streams.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import numerics as nx
from .corpus import Batch
from .errors import DimensionMismatch, MissingTarget, SpecMismatch
from .layers import (
    DenseParams,
    LstmParams,
    dense_forward,
    dense_param_count,
    init_params,
    load_params,
    lstm_param_count,
    lstm_unroll,
    save_params,
)
from .numerics import Tensor
from .optim import ScheduleState, apply_task_weights

TOPOLOGIES = ("baseline", "mrnn", "crnn")
KIND_LOSS = {
    "classification": "cross_entropy",
    "vector_regression": "mse",
    "char_lm": "cross_entropy",
    "word_lm": "mse",
    "missing_word": "mse",
}
PER_STEP = ("char_lm", "word_lm")
# automated task name -> TaskSpec kind
AUTO_KIND = {"next_word": "word_lm", "next_char": "char_lm", "missing_word": "missing_word"}
PRIMARY_STREAM = ("lstm1", "primary.lstm2", "primary.fc", "primary.head")


@dataclass(frozen=True)
class TaskSpec:
    name: str
    kind: str
    output_size: int

    def __post_init__(self):
        if self.kind not in KIND_LOSS:
            raise SpecMismatch(f"unknown task kind {self.kind!r}")
        if self.output_size < 1:
            raise SpecMismatch("output_size must be >= 1")
        if "." in self.name or " " in self.name:
            raise SpecMismatch(f"task names may not contain '.' or spaces: {self.name!r}")

    @property
    def loss(self) -> str:
        return KIND_LOSS[self.kind]

    @property
    def supervision_point(self) -> str:
        return "per_step" if self.kind in PER_STEP else "final_step"

    @property
    def activation(self) -> str:
        return "softmax" if self.loss == "cross_entropy" else "tanh"


def automated_task(name: str, output_size: int) -> TaskSpec:
    try:
        return TaskSpec(name, AUTO_KIND[name], output_size)
    except KeyError:
        raise SpecMismatch(f"unknown automated task {name!r}; choose from {sorted(AUTO_KIND)}") from None


@dataclass(frozen=True)
class ModelSpec:
    topology: str
    input_size: int
    hidden_size: int
    fc_size: int
    primary: TaskSpec
    automated: tuple[TaskSpec, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "automated", tuple(self.automated))
        if self.topology not in TOPOLOGIES:
            raise SpecMismatch(f"topology must be one of {TOPOLOGIES}")
        if self.topology == "baseline" and self.automated:
            raise SpecMismatch("the baseline has no automated heads")
        if self.topology != "baseline" and not self.automated:
            raise SpecMismatch(f"{self.topology} needs at least one automated head")
        if len(self.automated) > 2:
            raise SpecMismatch("at most two automated branches")
        if self.primary.kind not in ("classification", "vector_regression"):
            raise SpecMismatch("primary task must be classification or vector regression")
        names = [t.name for t in self.automated]
        if "primary" in names or len(set(names)) != len(names):
            raise SpecMismatch("automated task names must be unique and not 'primary'")
        for t in self.automated:
            if t.kind == "word_lm" and t.output_size != self.input_size:
                raise SpecMismatch("next-word head must predict input-sized embeddings")
            if t.kind == "char_lm" and t.output_size != self.input_size:
                raise SpecMismatch("next-char head must cover the input charset")

    def layer_shapes(self) -> dict[str, tuple]:
        I, H, F = self.input_size, self.hidden_size, self.fc_size
        shapes = {"lstm1": ("lstm", I, H)}
        lstm2_in = I + H if self.topology == "crnn" else H
        shapes["primary.lstm2"] = ("lstm", lstm2_in, H)
        shapes["primary.fc"] = ("dense", H, F, "tanh")
        shapes["primary.head"] = ("dense", F, self.primary.output_size, self.primary.activation)
        for t in self.automated:
            if self.topology == "mrnn":
                shapes[f"{t.name}.lstm2"] = ("lstm", H, H)
            shapes[f"{t.name}.fc"] = ("dense", H, F, "tanh")
            shapes[f"{t.name}.head"] = ("dense", F, t.output_size, t.activation)
        return shapes


def baseline_param_count(input_size: int, hidden_size: int, fc_size: int, n_out: int) -> int:
    """Closed-form count of the two-layer LSTM baseline."""
    return (lstm_param_count(input_size, hidden_size) + lstm_param_count(hidden_size, hidden_size)
            + dense_param_count(hidden_size, fc_size) + dense_param_count(fc_size, n_out))


class Model:
    def __init__(self, spec: ModelSpec, layers: Mapping[str, LstmParams | DenseParams]):
        self.spec = spec
        self.layers = dict(layers)
        expected = spec.layer_shapes()
        if set(expected) != set(self.layers):
            raise SpecMismatch(f"layers {sorted(self.layers)} do not match spec {sorted(expected)}")

    def __repr__(self):
        s = self.spec
        return (f"Model({s.topology}, input={s.input_size}, hidden={s.hidden_size}, "
                f"tasks=[{s.primary.name}{''.join(', ' + t.name for t in s.automated)}])")

    def parameters(self) -> dict[str, Tensor]:
        return {f"{lname}.{pname}": t for lname, layer in self.layers.items()
                for pname, t in layer.tensors().items()}

    def num_params(self) -> int:
        return sum(layer.num_params() for layer in self.layers.values())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.parameters().items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(state) != set(params):
            raise SpecMismatch("parameter names do not match this model")
        for k, t in params.items():
            if state[k].shape != t.shape:
                raise DimensionMismatch(f"{k}: {state[k].shape} vs {t.shape}")
            t.data = np.array(state[k], dtype=np.float64)


def build_model(spec: ModelSpec, seed: int = 0) -> Model:
    model = Model(spec, init_params(spec.layer_shapes(), seed))
    if spec.topology == "mrnn":
        expected = baseline_param_count(spec.input_size, spec.hidden_size, spec.fc_size, spec.primary.output_size)
        assert count_primary_stream_params(model) == expected
    return model


def _require(spec: ModelSpec, topology: str) -> None:
    if spec.topology != topology:
        raise SpecMismatch(f"expected a {topology} spec, got {spec.topology}")


def build_baseline(spec: ModelSpec, seed: int = 0) -> Model:
    _require(spec, "baseline")
    return build_model(spec, seed)


def build_mrnn(spec: ModelSpec, seed: int = 0) -> Model:
    _require(spec, "mrnn")
    return build_model(spec, seed)


def build_crnn(spec: ModelSpec, seed: int = 0) -> Model:
    _require(spec, "crnn")
    return build_model(spec, seed)


def count_primary_stream_params(model: Model) -> int:
    return sum(model.layers[name].num_params() for name in PRIMARY_STREAM)


@dataclass
class ForwardResult:
    """Per-task outputs and losses.

    Final-step outputs are ``B x out``; per-step outputs are ``(T*B) x out``
    in step-major order (see :meth:`per_step`).  A task whose batch has no
    supervised positions has no entry in ``losses``.
    """

    outputs: dict[str, Tensor]
    losses: dict[str, Tensor]
    combined: Tensor
    steps: int
    batch_size: int
    primary_name: str = "primary"

    def per_step(self, task: str) -> np.ndarray:
        """Per-step output as a ``batch x T x out`` array."""
        out = self.outputs[task].data
        return out.reshape(self.steps, self.batch_size, -1).transpose(1, 0, 2)


def _task_loss(task: TaskSpec, pred: Tensor, target) -> Tensor:
    if task.loss == "cross_entropy":
        return nx.cross_entropy(pred, target)
    return nx.mse(pred, Tensor(target))


def _head(model: Model, prefix: str, x: Tensor) -> Tensor:
    return dense_forward(model.layers[f"{prefix}.head"], dense_forward(model.layers[f"{prefix}.fc"], x))


def forward(model: Model, batch: Batch,
            weights: ScheduleState | tuple[float, float] | None = None,
            primary_only: bool = False) -> ForwardResult:
    """Run every task branch on ``batch`` and combine the losses.

    ``weights`` follows :func:`optim.apply_task_weights`.  With
    ``primary_only`` the automated branches are skipped (prediction).
    """
    spec = model.spec
    T, B, width = batch.inputs.shape
    if width != spec.input_size:
        raise DimensionMismatch(f"batch inputs have width {width}, model expects {spec.input_size}")
    xs = [Tensor(batch.inputs[t]) for t in range(T)]
    h1 = [s.h for s in lstm_unroll(model.layers["lstm1"], xs)]
    final_idx = (batch.lengths - 1) * B + np.arange(B)

    if spec.topology == "crnn":
        stream_in = [nx.concat_cols([x, h]) for x, h in zip(xs, h1)]
    else:
        stream_in = h1
    h2 = [s.h for s in lstm_unroll(model.layers["primary.lstm2"], stream_in)]
    final = nx.take_rows(nx.concat_rows(h2), final_idx)
    outputs = {"primary": _head(model, "primary", final)}
    losses = {"primary": _task_loss(spec.primary, outputs["primary"], batch.primary)}

    auto_losses = []
    for task in () if primary_only else spec.automated:
        if task.name not in batch.auto:
            raise MissingTarget(f"batch has no targets for task {task.name!r}")
        tgt = batch.auto[task.name]
        if spec.topology == "mrnn":
            src = [s.h for s in lstm_unroll(model.layers[f"{task.name}.lstm2"], h1)]
        else:
            src = h1
        if task.supervision_point == "per_step":
            out = _head(model, task.name, nx.concat_rows(src))
            idx = np.flatnonzero(tgt.mask.reshape(-1))
            flat = tgt.targets.reshape(T * B, -1) if task.loss == "mse" else tgt.targets.reshape(-1)
        else:
            out = _head(model, task.name, nx.take_rows(nx.concat_rows(src), final_idx))
            idx = np.flatnonzero(tgt.mask)
            flat = tgt.targets
        outputs[task.name] = out
        if idx.size:
            losses[task.name] = _task_loss(task, nx.take_rows(out, idx), flat[idx])
            auto_losses.append(losses[task.name])

    combined = apply_task_weights(losses["primary"], auto_losses, weights)
    return ForwardResult(outputs, losses, combined, T, B)


# ------------------------------------------------------------------ persistence

PARAMS_FILE = "params.bin"
MANIFEST_FILE = "model.txt"


def spec_to_manifest(spec: ModelSpec) -> dict[str, str]:
    return {
        "topology": spec.topology,
        "input_size": str(spec.input_size),
        "hidden_size": str(spec.hidden_size),
        "fc_size": str(spec.fc_size),
        "primary": f"{spec.primary.name}:{spec.primary.kind}:{spec.primary.output_size}",
        "automated": ",".join(f"{t.name}:{t.kind}:{t.output_size}" for t in spec.automated),
    }


def _task_from(text: str) -> TaskSpec:
    name, kind, size = text.split(":")
    return TaskSpec(name, kind, int(size))


def spec_from_manifest(m: Mapping[str, str]) -> ModelSpec:
    auto = tuple(_task_from(t) for t in m.get("automated", "").split(",") if t)
    return ModelSpec(m["topology"], int(m["input_size"]), int(m["hidden_size"]), int(m["fc_size"]),
                     _task_from(m["primary"]), auto)


def write_manifest(path: Path, items: Mapping[str, str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in items.items():
            fh.write(f"{k} = {v}\n")


def read_manifest(path: Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}: expected 'key = value', got {line!r}")
        out[key.strip()] = value.strip()
    return out


def save_model(model: Model, directory: str | Path, extra: Mapping[str, str] | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_params(directory / PARAMS_FILE, model.parameters())
    items = spec_to_manifest(model.spec)
    for k, v in (extra or {}).items():
        items.setdefault(k, str(v))
    write_manifest(directory / MANIFEST_FILE, items)
    return directory


def load_model(directory: str | Path) -> tuple[Model, dict[str, str]]:
    directory = Path(directory)
    manifest = read_manifest(directory / MANIFEST_FILE)
    model = build_model(spec_from_manifest(manifest), seed=0)
    model.load_state_dict(load_params(directory / PARAMS_FILE))
    return model, manifest
