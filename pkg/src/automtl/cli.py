"""Command-line entry point: ``automtl {prep,train,eval,gradcheck,compare,complete}``.

Exit status is 0 on success, 1 for invalid input or a failed check, 2 for
runtime failures.  Messages go to standard error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .corpus import (
    DocumentEncoder,
    EncodedDoc,
    clean_documents,
    holdout_split,
    load_charset,
    load_stopwords,
    read_tsv,
    split_dataset,
    tokenize_words,
    top_labels,
    write_tsv,
)
from .embeddings import load_embeddings
from .errors import AutoMTLError, ConfigError, NoEligibleToken
from .harness import (
    PRESETS,
    MetricsRecord,
    RunConfig,
    compare,
    evaluate,
    make_config,
    metrics_csv,
    read_config_file,
    threshold_table,
    train,
    coerce_field,
)
from .models import load_model, forward
from .tasks import UNK, decode_nearest, missing_word_example

log = logging.getLogger("automtl")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; flags override its entries")
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if str(f.type).startswith("bool"):
            p.add_argument(flag, dest=f.name, action="store_const", const=True, default=None)
        else:
            p.add_argument(flag, dest=f.name, default=None, metavar=f.name.upper())


def _run_config(args) -> RunConfig:
    file_values = read_config_file(args.config) if args.config else {}
    overrides = {}
    for f in dataclasses.fields(RunConfig):
        v = getattr(args, f.name)
        if v is None:
            continue
        overrides[f.name] = v if isinstance(v, bool) else coerce_field(f.name, v)
    cfg = make_config(file_values, overrides)
    if cfg.seed is None:
        raise ConfigError("--seed is required")
    return cfg


def cmd_prep(args) -> int:
    preset = PRESETS[args.preset]
    docs = read_tsv(args.input)
    n_raw = len(docs)
    if preset.mode == "char":
        docs = clean_documents(docs, load_charset(args.charset))
        docs = top_labels(docs, args.top_labels)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    if preset.ratios is None:
        train_d, valid_d = holdout_split(docs, preset.n_valid, args.seed)
        splits = {"train": train_d, "valid": valid_d}
    else:
        train_d, valid_d, test_d = split_dataset(docs, preset.ratios, args.seed)
        splits = {"train": train_d, "valid": valid_d, "test": test_d}
    for name, part in splits.items():
        write_tsv(out / f"{name}.tsv", part)
    print(f"{n_raw} read, {len(docs)} kept; " + ", ".join(f"{k}={len(v)}" for k, v in splits.items()))
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    res = train(cfg)
    h = res.history
    print(f"wrote {res.metrics_path}; best valid accuracy {h.best_accuracy:.4f} at epoch {h.best_epoch}")
    return 0


def cmd_compare(args) -> int:
    cfg = _run_config(args)
    res = compare(cfg, n_seeds=args.n_seeds, threshold=args.threshold)
    sys.stdout.write(threshold_table(res.thresholds, res.seeds, args.threshold))
    return 0


def encoder_from_manifest(manifest: dict, embeddings: str | None = None, charset: str | None = None):
    """Rebuild the training-time encoder for a saved model; returns ``(encoder, store)``."""
    emb_path = embeddings or manifest.get("embeddings") or None
    store = load_embeddings(emb_path) if emb_path else None
    mode = manifest.get("mode", "word")
    label_names = json.loads(manifest["label_names"]) if manifest.get("label_names") else None
    label_store = None
    if label_names is None:
        if store is None:
            raise ConfigError("this model regresses onto embeddings; pass --embeddings")
        label_store = store.subset(json.loads(manifest["label_tokens"]))
    auto = [t.split(":")[0] for t in manifest.get("automated", "").split(",") if t]
    cs = charset or manifest.get("charset") or None
    encoder = DocumentEncoder(
        mode, store=store if mode == "word" else None, charset=load_charset(cs) if mode == "char" else None,
        label_names=label_names, label_store=label_store, auto_kinds=auto,
        stopwords=load_stopwords(manifest.get("stopwords") or None),
        max_len=int(manifest["max_len"]), seed=int(manifest.get("seed", 0)),
    )
    return encoder, store


def cmd_eval(args) -> int:
    model, manifest = load_model(args.model)
    encoder, _ = encoder_from_manifest(manifest, args.embeddings, args.charset)
    docs = read_tsv(args.data)
    if encoder.mode == "char":
        docs = clean_documents(docs, encoder.charset)
    enc = encoder.encode(docs)
    metrics = evaluate(model, enc, encoder, encoder.label_store, batch_size=args.batch_size)
    primary_name = manifest.get("primary_name", "primary")
    epoch = int(manifest.get("best_epoch", 0))
    records = [MetricsRecord(epoch, args.split, primary_name if t == "primary" else t, m.loss, m.accuracy,
                             None, None) for t, m in metrics.items()]
    sys.stdout.write(metrics_csv(records))
    return 0


def cmd_gradcheck(args) -> int:
    from .checks import run_gradcheck

    t0 = time.perf_counter()
    results = run_gradcheck(tolerance=args.tolerance, seed=args.seed)
    failed = 0
    for name, rep in results:
        status = "PASS" if rep.passed else "FAIL"
        failed += not rep.passed
        print(f"{status}  {name:<28} max_rel_error={rep.worst:.3e}")
        if args.verbose or not rep.passed:
            for line in rep.lines():
                print(line)
    print(f"{len(results) - failed}/{len(results)} checks within {args.tolerance:g} "
          f"({time.perf_counter() - t0:.1f}s)")
    return 1 if failed else 0


def cmd_complete(args) -> int:
    model, manifest = load_model(args.model)
    names = [t.name for t in model.spec.automated]
    if "missing_word" not in names:
        raise ConfigError("model was not trained with the missing_word task")
    encoder, store = encoder_from_manifest(manifest, args.embeddings)
    if store is None:
        raise ConfigError("pass --embeddings")
    stopwords = encoder.stopwords
    label = encoder.label_names[0] if encoder.classification else encoder.label_store.tokens[0]
    dummy = encoder.primary_target(label)
    lines = Path(args.text).read_text(encoding="utf-8").splitlines()
    for i, line in enumerate(lines):
        tokens = tokenize_words(line)[: encoder.max_len]
        if not tokens:
            continue
        try:
            masked = missing_word_example(tokens, stopwords, store, np.random.default_rng(args.seed ^ i))
        except NoEligibleToken:
            print(f"{i}\tskipped (no maskable word)")
            continue
        ids = np.array([store.index.get(t, -1) if t != UNK else -1 for t in masked.tokens], dtype=np.intp)
        batch = encoder.batch([EncodedDoc(i, ids, label, dummy, masked.target_vector)])
        out = forward(model, batch).outputs["missing_word"].data[0]
        try:
            guesses = decode_nearest(out, store, args.k)
        except AutoMTLError:
            guesses = []
        print(f"{i}\t{' '.join(masked.tokens)}\tremoved={masked.removed_token}\tnearest={','.join(guesses)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="automtl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prep", help="clean, filter and split a raw TSV corpus")
    p.add_argument("--preset", choices=sorted(PRESETS), required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--charset")
    p.add_argument("--top-labels", type=int, default=71)
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("train", help="train one model")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="train baseline, MRNN and CRNN over several seeds")
    _add_run_flags(p)
    p.add_argument("--n-seeds", type=int, default=3)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("eval", help="evaluate a saved model on a TSV split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--embeddings")
    p.add_argument("--charset")
    p.add_argument("--batch-size", type=int, default=256)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference verification of ops, LSTM and models")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("complete", help="missing-word completion demo on a text file")
    p.add_argument("--model", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_complete)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"automtl: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"automtl: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"automtl: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
