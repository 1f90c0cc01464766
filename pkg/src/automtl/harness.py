"""Training runs, evaluation, metrics files and dataset presets."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .corpus import (
    DocumentEncoder,
    EncodedDoc,
    clean_documents,
    holdout_split,
    load_charset,
    load_stopwords,
    make_batches,
    normalize_hashtag,
    read_tsv,
    split_dataset,
)
from .embeddings import EmbeddingStore, load_embeddings
from .errors import ConfigError, EmptySplit, NonFiniteLoss, NonFiniteValue
from .models import (
    Model,
    ModelSpec,
    TaskSpec,
    automated_task,
    build_model,
    count_primary_stream_params,
    forward,
    save_model,
)
from .numerics import EPS_LOG, Tape
from .optim import Adam, ScheduleState, global_norm, lr_schedule
from .tasks import topk_match_rate

log = logging.getLogger(__name__)

TOPK_FRACTION = 0.05
METRICS_HEADER = ["epoch", "split", "task", "loss", "accuracy", "lr_prim", "lr_auto", "wall_seconds"]


@dataclass(frozen=True)
class Preset:
    mode: str
    label_kind: str  # "class" or "vector"
    primary_name: str
    hidden_size: int
    auto_tasks: tuple[str, ...]
    lr_mode: str  # how MTL topologies train: "scheduled" or "fixed"
    lr_actual: float | None
    baseline_lr: float
    ratios: tuple[float, float, float] | None = (0.8, 0.1, 0.1)
    n_valid: int | None = None


PRESETS = {
    "rtmr": Preset("word", "class", "sentiment", 512, ("next_word",), "scheduled", 0.01, 1e-4),
    "agnews": Preset("word", "class", "topic", 128, ("next_word",), "scheduled", 0.01, 1e-3,
                     ratios=None, n_valid=18_275),
    "twitter": Preset("char", "vector", "hashtag", 128, ("next_char",), "fixed", None, 1e-3),
    "custom": Preset("word", "class", "primary", 128, ("next_word",), "fixed", None, 1e-3),
}


@dataclass
class RunConfig:
    """Every knob of one run.  ``None`` fields take the preset's value."""

    preset: str = "custom"
    topology: str = "mrnn"
    hidden_size: int | None = None
    fc_size: int | None = None
    batch_size: int = 128
    epochs: int = 10
    lr_mode: str = "auto"
    lr_actual: float | None = None
    lr: float | None = None
    clip_norm: float = 1.0
    seed: int | None = None
    data: str | None = None
    embeddings: str | None = None
    charset: str | None = None
    stopwords: str | None = None
    output_dir: str = "runs"
    auto_tasks: str | None = None
    max_len: int | None = None
    mode: str | None = None
    label_kind: str | None = None
    record_time: bool = False
    debug_clip: bool = False

    def validate(self) -> "RunConfig":
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if self.topology not in ("baseline", "mrnn", "crnn"):
            raise ConfigError(f"unknown topology {self.topology!r}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not self.clip_norm > 0:
            raise ConfigError("clip_norm must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr_mode not in ("auto", "scheduled", "fixed"):
            raise ConfigError("lr_mode must be auto, scheduled or fixed")
        for name in ("lr", "lr_actual"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError(f"{name} must be > 0")
        if self.mode not in (None, "word", "char"):
            raise ConfigError("mode must be word or char")
        if self.label_kind not in (None, "class", "vector"):
            raise ConfigError("label_kind must be class or vector")
        return self

    @property
    def preset_info(self) -> Preset:
        return PRESETS[self.preset]

    def resolved_mode(self) -> str:
        return self.mode or self.preset_info.mode

    def resolved_label_kind(self) -> str:
        return self.label_kind or self.preset_info.label_kind

    def resolved_hidden(self) -> int:
        return self.hidden_size or self.preset_info.hidden_size

    def resolved_fc(self) -> int:
        return self.fc_size or self.resolved_hidden()

    def resolved_auto_tasks(self) -> tuple[str, ...]:
        if self.topology == "baseline":
            return ()
        if self.auto_tasks:
            return tuple(t.strip() for t in self.auto_tasks.split(",") if t.strip())
        return self.preset_info.auto_tasks

    def learning_rates(self) -> tuple[str, float]:
        """``("scheduled", lr_actual)`` or ``("fixed", lr)`` for this topology."""
        p = self.preset_info
        mode = self.lr_mode
        if mode == "auto":
            mode = "fixed" if self.topology == "baseline" else p.lr_mode
        if mode == "scheduled":
            if self.topology == "baseline":
                raise ConfigError("the baseline has no automated task to schedule against")
            return "scheduled", self.lr_actual or p.lr_actual or 0.01
        if self.lr is not None:
            return "fixed", self.lr
        return "fixed", p.baseline_lr


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def coerce_field(name: str, raw: str):
    kind = str(_FIELD_TYPES[name])
    if raw in ("", "none", "None"):
        return None
    try:
        if kind.startswith("bool"):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return raw


def read_config_file(path: str | Path) -> dict:
    """Parse ``key = value`` lines; keys must be RunConfig field names."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = coerce_field(key, raw.strip())
    return values


def make_config(file_values: Mapping | None = None, overrides: Mapping | None = None) -> RunConfig:
    merged = dict(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = set(merged) - set(_FIELD_TYPES)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**merged).validate()


# ------------------------------------------------------------------ metrics


@dataclass
class MetricsRecord:
    epoch: int
    split: str
    task: str
    loss: float
    accuracy: float | None
    lr_prim: float | None
    lr_auto: float | None
    wall_seconds: float = 0.0


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def metrics_csv(records: Sequence[MetricsRecord], include_time: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in records:
        w.writerow([r.epoch, r.split, r.task, _fmt(r.loss), _fmt(r.accuracy), _fmt(r.lr_prim),
                    _fmt(r.lr_auto), _fmt(r.wall_seconds) if include_time else ""])
    return buf.getvalue()


def read_metrics_csv(path: str | Path) -> list[MetricsRecord]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(MetricsRecord(
                int(row["epoch"]), row["split"], row["task"], float(row["loss"]),
                float(row["accuracy"]) if row["accuracy"] else None,
                float(row["lr_prim"]) if row["lr_prim"] else None,
                float(row["lr_auto"]) if row["lr_auto"] else None,
                float(row["wall_seconds"]) if row["wall_seconds"] else 0.0,
            ))
    return out


def epochs_to_threshold(history: Sequence[MetricsRecord], task: str, threshold: float,
                        split: str = "valid") -> int | None:
    """First (1-based) epoch whose accuracy reaches ``threshold``; None if never."""
    if not history:
        raise ValueError("empty history")
    for r in sorted((r for r in history if r.task == task and r.split == split), key=lambda r: r.epoch):
        if r.accuracy is not None and r.accuracy >= threshold:
            return r.epoch
    return None


# ------------------------------------------------------------------ evaluation


@dataclass
class _Acc:
    loss: float = 0.0
    docs: int = 0
    hits: int = 0
    trials: int = 0


@dataclass
class TaskMetrics:
    loss: float
    accuracy: float | None
    count: int


def predict_outputs(model: Model, docs: Sequence[EncodedDoc], encoder: DocumentEncoder,
                    batch_size: int = 256, primary_only: bool = True):
    """Yield ``(batch, ForwardResult)`` in document order, without recording a tape."""
    for batch in make_batches(list(docs), encoder, batch_size, shuffle=False):
        yield batch, forward(model, batch, primary_only=primary_only)


def evaluate(model: Model, docs: Sequence[EncodedDoc], encoder: DocumentEncoder,
             label_store: EmbeddingStore | None = None, batch_size: int = 256,
             fraction: float = TOPK_FRACTION) -> dict[str, TaskMetrics]:
    """Per-task loss averaged over documents, plus accuracy where defined.

    Classification accuracy is argmax (lowest index on ties); vector
    regression accuracy is the top-``fraction`` cosine match rate; next-char
    accuracy is per position.
    """
    if not docs:
        raise EmptySplit("cannot evaluate an empty split")
    spec = model.spec
    acc = {t: _Acc() for t in ["primary"] + [a.name for a in spec.automated]}
    preds, labels = [], []
    for batch, res in predict_outputs(model, docs, encoder, batch_size, primary_only=False):
        out = res.outputs["primary"].data
        a = acc["primary"]
        if spec.primary.kind == "classification":
            p = out[np.arange(batch.size), batch.primary]
            a.loss += float(-np.log(np.maximum(p, EPS_LOG)).sum())
            a.hits += int((out.argmax(axis=1) == batch.primary).sum())
            a.trials += batch.size
        else:
            a.loss += float(((out - batch.primary) ** 2).mean(axis=1).sum())
            preds.append(out)
            labels.extend(encoder.label_token(l) for l in batch.labels)
        a.docs += batch.size
        for task in spec.automated:
            tgt = batch.auto[task.name]
            out = res.outputs[task.name].data
            a = acc[task.name]
            if task.supervision_point == "final_step":
                a.loss += float(((out - tgt.targets) ** 2).mean(axis=1)[tgt.mask].sum())
                a.docs += int(tgt.mask.sum())
                continue
            T, B = tgt.mask.shape
            mask = tgt.mask.reshape(-1)
            if task.loss == "cross_entropy":
                y = tgt.targets.reshape(-1)
                pos_loss = -np.log(np.maximum(out[np.arange(T * B), y], EPS_LOG))
                a.hits += int(((out.argmax(axis=1) == y) & mask).sum())
                a.trials += int(mask.sum())
            else:
                pos_loss = ((out - tgt.targets.reshape(T * B, -1)) ** 2).mean(axis=1)
            pos_loss = np.where(mask, pos_loss, 0.0).reshape(T, B)
            n_pos = tgt.mask.sum(axis=0)
            has = n_pos > 0
            a.loss += float((pos_loss.sum(axis=0)[has] / n_pos[has]).sum())
            a.docs += int(has.sum())
    result = {}
    a = acc["primary"]
    if spec.primary.kind == "classification":
        primary_acc = a.hits / a.trials
    else:
        primary_acc = topk_match_rate(np.vstack(preds), labels, label_store, fraction)
    result["primary"] = TaskMetrics(a.loss / a.docs, primary_acc, a.docs)
    for task in spec.automated:
        a = acc[task.name]
        accuracy = a.hits / a.trials if task.kind == "char_lm" and a.trials else None
        result[task.name] = TaskMetrics(a.loss / a.docs if a.docs else float("nan"), accuracy, a.docs)
    return result


def predict_primary(model: Model, docs: Sequence[EncodedDoc], encoder: DocumentEncoder,
                    batch_size: int = 256) -> np.ndarray:
    return np.vstack([res.outputs["primary"].data for _, res in predict_outputs(model, docs, encoder, batch_size)])


# ------------------------------------------------------------------ training


@dataclass
class History:
    records: list[MetricsRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_accuracy: float = -math.inf
    best_state: dict | None = None
    max_post_clip_norm: float = 0.0

    def accuracies(self, split: str = "valid", task: str = "primary") -> list[float]:
        return [r.accuracy for r in self.records if r.split == split and r.task == task]


def train_model(model: Model, encoder: DocumentEncoder, train_docs: Sequence[EncodedDoc],
                valid_docs: Sequence[EncodedDoc], *, epochs: int, lr_mode: str, lr: float,
                clip_norm: float = 1.0, batch_size: int = 128, seed: int = 0,
                label_store: EmbeddingStore | None = None, task_names: Mapping[str, str] | None = None,
                debug_clip: bool = False,
                stop: Callable[[History], bool] | None = None) -> History:
    """Epoch loop: forward, combined loss, backward, clip, Adam; evaluate train and valid.

    ``lr_mode="scheduled"`` runs one Adam at ``lr`` (the total rate) and
    weights the two losses by the schedule, with 0-based epoch index.
    ``stop`` is called after each epoch and may end training early.
    """
    if lr_mode not in ("scheduled", "fixed"):
        raise ConfigError(f"lr_mode must be scheduled or fixed, got {lr_mode!r}")
    task_names = dict(task_names or {})
    has_auto = bool(model.spec.automated)
    opt = Adam(model.parameters(), lr=lr, clip_norm=clip_norm)
    hist = History()
    t0 = time.perf_counter()
    for epoch in range(1, epochs + 1):
        if lr_mode == "scheduled" and has_auto:
            sched = ScheduleState(lr, epochs, epoch - 1)
            weights = sched
            lr_prim, lr_auto = lr_schedule(sched)
        else:
            weights = None
            lr_prim, lr_auto = lr, (lr if has_auto else 0.0)
        for bi, batch in enumerate(make_batches(train_docs, encoder, batch_size, seed=seed, epoch=epoch)):
            try:
                with Tape() as tape:
                    res = forward(model, batch, weights)
                tape.backward(res.combined)
            except NonFiniteValue as exc:
                raise NonFiniteLoss(epoch, bi, f"non-finite value at epoch {epoch}, batch {bi}: {exc}") from exc
            opt.step()
            if debug_clip:
                post = global_norm(p.grad for p in opt.params.values())
                hist.max_post_clip_norm = max(hist.max_post_clip_norm, post)
                assert post <= clip_norm + 1e-12, f"post-clip norm {post} exceeds {clip_norm}"
            opt.zero_grad()
        for split, docs in (("train", train_docs), ("valid", valid_docs)):
            if not docs:
                continue
            metrics = evaluate(model, docs, encoder, label_store, batch_size=max(batch_size, 256))
            for task, m in metrics.items():
                hist.records.append(MetricsRecord(epoch, split, task_names.get(task, task), m.loss,
                                                  m.accuracy, lr_prim, lr_auto, time.perf_counter() - t0))
            if split == "valid" and metrics["primary"].accuracy > hist.best_accuracy:
                hist.best_accuracy = metrics["primary"].accuracy
                hist.best_epoch = epoch
                hist.best_state = model.state_dict()
        if stop is not None and stop(hist):
            break
    return hist


# ------------------------------------------------------------------ end-to-end runs


@dataclass
class RunSetup:
    config: RunConfig
    encoder: DocumentEncoder
    spec: ModelSpec
    train: list[EncodedDoc]
    valid: list[EncodedDoc]
    test: list[EncodedDoc]
    label_store: EmbeddingStore | None = None


def load_documents(config: RunConfig):
    """Read and split the dataset named by ``config.data`` (a TSV file or a directory of splits)."""
    if not config.data:
        raise ConfigError("no data path given")
    path = Path(config.data)
    seed = config.seed or 0
    if path.is_dir():
        train = read_tsv(path / "train.tsv")
        valid = read_tsv(path / "valid.tsv") if (path / "valid.tsv").exists() else []
        test = read_tsv(path / "test.tsv") if (path / "test.tsv").exists() else []
    elif path.is_file():
        docs = read_tsv(path)
        p = config.preset_info
        if p.ratios is None:
            train, valid = holdout_split(docs, p.n_valid, seed)
            test = []
        else:
            train, valid, test = split_dataset(docs, p.ratios, seed)
    else:
        raise ConfigError(f"data path {path} does not exist")
    if config.resolved_mode() == "char":
        charset = load_charset(config.charset)
        train, valid, test = (clean_documents(d, charset) for d in (train, valid, test))
    return train, valid, test


def prepare_run(config: RunConfig, docs=None, store: EmbeddingStore | None = None) -> RunSetup:
    """Build the encoder, model spec and encoded splits for ``config``.

    ``docs`` (train, valid, test) and ``store`` may be passed in-memory
    instead of being read from ``config.data`` / ``config.embeddings``.
    """
    config.validate()
    train, valid, test = docs if docs is not None else load_documents(config)
    mode = config.resolved_mode()
    if store is None and config.embeddings:
        store = load_embeddings(config.embeddings)
    if store is None and (mode == "word" or config.resolved_label_kind() == "vector"):
        raise ConfigError("this preset needs an embeddings file")
    label_store = None
    all_docs = list(train) + list(valid) + list(test)
    if config.resolved_label_kind() == "class":
        label_names = sorted({d.label for d in all_docs})
    else:
        tags = sorted({normalize_hashtag(d.label) for d in all_docs})
        known = [t for t in tags if t in store]
        if len(known) < len(tags):
            log.info("dropping documents of %d labels missing from the embeddings", len(tags) - len(known))
            keep = set(known)
            train, valid, test = ([d for d in s if normalize_hashtag(d.label) in keep] for s in (train, valid, test))
        label_store = store.subset(known)
        label_names = None
    auto = config.resolved_auto_tasks()
    encoder = DocumentEncoder(
        mode, store=store if mode == "word" else None, charset=load_charset(config.charset) if mode == "char" else None,
        label_names=label_names, label_store=label_store, auto_kinds=auto,
        stopwords=load_stopwords(config.stopwords), max_len=config.max_len, seed=config.seed or 0,
    )
    kind = "classification" if label_names is not None else "vector_regression"
    primary = TaskSpec("primary", kind, encoder.primary_size)
    auto_specs = tuple(automated_task(a, encoder.input_size) for a in auto)
    spec = ModelSpec(config.topology, encoder.input_size, config.resolved_hidden(), config.resolved_fc(),
                     primary, auto_specs)
    return RunSetup(config, encoder, spec, encoder.encode(train), encoder.encode(valid),
                    encoder.encode(test), label_store)


def encoder_manifest(setup: RunSetup) -> dict[str, str]:
    c, e = setup.config, setup.encoder
    return {
        "preset": c.preset,
        "mode": e.mode,
        "max_len": str(e.max_len),
        "primary_name": c.preset_info.primary_name,
        "label_names": json.dumps(e.label_names) if e.label_names is not None else "",
        "label_tokens": json.dumps(setup.label_store.tokens) if setup.label_store is not None else "",
        "embeddings": str(Path(c.embeddings).resolve()) if c.embeddings else "",
        "charset": str(Path(c.charset).resolve()) if c.charset else "",
        "stopwords": str(Path(c.stopwords).resolve()) if c.stopwords else "",
        "seed": str(c.seed or 0),
    }


@dataclass
class RunResult:
    history: History
    model: Model
    metrics_path: Path | None
    model_dir: Path | None
    setup: RunSetup


def train(config: RunConfig, docs=None, store: EmbeddingStore | None = None, write: bool = True,
          stop: Callable[[History], bool] | None = None) -> RunResult:
    """Full run: prepare data, train, write ``metrics_<seed>.csv`` and best/final models."""
    if config.seed is None:
        raise ConfigError("--seed is required")
    setup = prepare_run(config, docs, store)
    model = build_model(setup.spec, config.seed)
    log.info("%r: %d parameters, primary stream %d", model, model.num_params(),
             count_primary_stream_params(model))
    lr_mode, lr = config.learning_rates()
    names = {"primary": config.preset_info.primary_name}
    hist = train_model(model, setup.encoder, setup.train, setup.valid, epochs=config.epochs, lr_mode=lr_mode,
                       lr=lr, clip_norm=config.clip_norm, batch_size=config.batch_size, seed=config.seed,
                       label_store=setup.label_store, task_names=names, debug_clip=config.debug_clip, stop=stop)
    metrics_path = model_dir = None
    if write:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        metrics_path = out / f"metrics_{config.seed}.csv"
        metrics_path.write_text(metrics_csv(hist.records, config.record_time), encoding="utf-8")
        model_dir = out / f"model_{config.seed}"
        extra = encoder_manifest(setup)
        save_model(model, model_dir / "final", extra)
        if hist.best_state is not None:
            best = build_model(setup.spec, 0)
            best.load_state_dict(hist.best_state)
            save_model(best, model_dir / "best", {**extra, "best_epoch": str(hist.best_epoch)})
    return RunResult(hist, model, metrics_path, model_dir, setup)


@dataclass
class CompareResult:
    histories: dict[str, list[History]]
    thresholds: dict[str, list[int | None]]
    seeds: list[int]


def _summary(values: Sequence[int | None]) -> str:
    got = [v for v in values if v is not None]
    if not got:
        return "not reached"
    mean = sum(got) / len(got)
    tail = "" if len(got) == len(values) else f" ({len(values) - len(got)} not reached)"
    return f"{mean:.2f} [{min(got)}, {max(got)}]{tail}"


def compare(config: RunConfig, n_seeds: int = 3, threshold: float = 0.5, docs=None,
            store: EmbeddingStore | None = None, write: bool = True) -> CompareResult:
    """Train baseline, MRNN and CRNN over consecutive seeds; write curves and a threshold table."""
    if config.seed is None:
        raise ConfigError("--seed is required")
    seeds = [config.seed + i for i in range(n_seeds)]
    base_out = Path(config.output_dir)
    histories, thresholds = {}, {}
    curves = []
    for topo in ("baseline", "mrnn", "crnn"):
        histories[topo], thresholds[topo] = [], []
        for s in seeds:
            cfg = dataclasses.replace(config, topology=topo, seed=s, output_dir=str(base_out / topo))
            res = train(cfg, docs, store, write=write)
            histories[topo].append(res.history)
            thresholds[topo].append(epochs_to_threshold(res.history.records, names_primary(cfg), threshold))
            curves.extend((topo, s, r) for r in res.history.records)
    if write:
        base_out.mkdir(parents=True, exist_ok=True)
        with open(base_out / "curves.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["topology", "seed"] + METRICS_HEADER[:-1])
            for topo, s, r in curves:
                w.writerow([topo, s, r.epoch, r.split, r.task, _fmt(r.loss), _fmt(r.accuracy),
                            _fmt(r.lr_prim), _fmt(r.lr_auto)])
        (base_out / "thresholds.txt").write_text(threshold_table(thresholds, seeds, threshold), encoding="utf-8")
    return CompareResult(histories, thresholds, seeds)


def names_primary(config: RunConfig) -> str:
    return config.preset_info.primary_name


def threshold_table(thresholds: Mapping[str, Sequence[int | None]], seeds: Sequence[int], threshold: float) -> str:
    lines = [f"epochs to reach validation accuracy {threshold:g}",
             f"{'topology':<10} " + " ".join(f"seed{s:<4}" for s in seeds) + "  mean [min, max]"]
    for topo, vals in thresholds.items():
        cells = " ".join(f"{('-' if v is None else v)!s:<8}" for v in vals)
        lines.append(f"{topo:<10} {cells}  {_summary(vals)}")
    return "\n".join(lines) + "\n"
