"""Dataset ingestion: cleaning, tokenization, splitting, encoding and batching.

Dataset files are UTF-8, one record per line, ``label<TAB>text``.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .embeddings import EmbeddingStore, load_embeddings  # noqa: F401  (re-exported)
from .errors import BadRatios, Dropped, EmptyDataset, NoEligibleToken, UnknownLabel
from .tasks import UNK, eligible_positions

log = logging.getLogger(__name__)

DEFAULT_MAX_LEN = {"word": 64, "char": 160}


@dataclass
class Document:
    id: int
    text: str
    label: str


class Charset:
    """Ordered characters; position in the list is the one-hot index."""

    def __init__(self, chars: Sequence[str]):
        chars = list(chars)
        if any(len(c) != 1 for c in chars):
            raise ValueError("charset entries must be single characters")
        if len(set(chars)) != len(chars):
            raise ValueError("charset characters must be unique")
        self.chars = chars
        self.index = {c: i for i, c in enumerate(chars)}

    def __len__(self):
        return len(self.chars)

    def __contains__(self, c):
        return c in self.index

    @property
    def size(self) -> int:
        return len(self.chars)

    def decode(self, ids: Iterable[int]) -> str:
        return "".join(self.chars[i] for i in ids)


def _data_path(name: str):
    return resources.files("automtl").joinpath("data", name)


def load_charset(path: str | Path | None = None) -> Charset:
    text = Path(path).read_text(encoding="utf-8") if path else _data_path("charset_twitter.txt").read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return Charset(lines)


def load_stopwords(path: str | Path | None = None) -> frozenset[str]:
    text = Path(path).read_text(encoding="utf-8") if path else _data_path("stopwords.txt").read_text(encoding="utf-8")
    return frozenset(w.strip().lower() for w in text.splitlines() if w.strip())


# ------------------------------------------------------------------ cleaning

_URL = re.compile(r"(?:[a-z][a-z0-9+.-]*://|www\.)\S*")
_HASHTAG = re.compile(r"#\w+")
_SPACES = re.compile(r"\s+")


def normalize_hashtag(label: str) -> str:
    return label.strip().lower().lstrip("#")


def clean_tweet(text: str, charset: Charset | None = None) -> str:
    """Lowercase, drop retweets, strip URLs, hashtags and out-of-charset characters.

    Raises :class:`Dropped` for retweets and tweets left empty.  The rules
    are applied until nothing changes, which makes cleaning idempotent.
    """
    charset = charset or load_charset()
    cur = text
    while True:
        s = cur.lower()
        if s.lstrip().startswith("rt @"):
            raise Dropped("retweet")
        s = _URL.sub(" ", s)
        s = _HASHTAG.sub(" ", s)
        s = "".join(ch if ch in charset else ("" if not ch.isspace() else " ") for ch in s)
        s = _SPACES.sub(" ", s).strip()
        if s == cur:
            break
        cur = s
    if not cur:
        raise Dropped("empty after cleaning")
    return cur


def clean_documents(docs: Iterable[Document], charset: Charset | None = None) -> list[Document]:
    charset = charset or load_charset()
    out, dropped = [], {}
    for d in docs:
        try:
            out.append(Document(d.id, clean_tweet(d.text, charset), d.label))
        except Dropped as sig:
            dropped[sig.reason] = dropped.get(sig.reason, 0) + 1
    if dropped:
        log.info("dropped %s", ", ".join(f"{n} ({r})" for r, n in sorted(dropped.items())))
    return out


_WORD = re.compile(r"\w+|[^\w\s]")


def tokenize_words(text: str) -> list[str]:
    """Whitespace split after separating punctuation; ``UNK`` survives intact."""
    return _WORD.findall(text)


def tokenize_chars(text: str, charset: Charset) -> list[int]:
    return [charset.index[c] for c in text if c in charset.index]


def map_tokens_to_embeddings(tokens: Sequence[str], store: EmbeddingStore) -> tuple[np.ndarray, np.ndarray]:
    """Vectors for ``tokens`` (zeros when OOV) and an in-vocabulary flag per token."""
    idx = np.array([store.index.get(t, -1) for t in tokens], dtype=np.intp)
    table = np.vstack([store.vectors, np.zeros((1, store.dim))])
    return table[idx] if idx.size else np.zeros((0, store.dim)), idx >= 0


# ------------------------------------------------------------------ files


def read_tsv(path: str | Path) -> list[Document]:
    docs = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            if "\t" not in line:
                raise ValueError(f"{path}:{i + 1}: expected 'label<TAB>text'")
            label, text = line.split("\t", 1)
            docs.append(Document(i, text, label))
    return docs


def write_tsv(path: str | Path, docs: Iterable[Document]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in docs:
            fh.write(f"{d.label}\t{d.text.replace(chr(9), ' ').replace(chr(10), ' ')}\n")


def top_labels(docs: Sequence[Document], n: int) -> list[Document]:
    """Keep documents whose label is among the ``n`` most frequent (ties by label)."""
    counts: dict[str, int] = {}
    for d in docs:
        counts[d.label] = counts.get(d.label, 0) + 1
    keep = {l for l, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:n]}
    return [d for d in docs if d.label in keep]


def split_dataset(docs: Sequence, ratios=(0.8, 0.1, 0.1), seed: int = 0):
    """Seeded shuffle then contiguous (train, valid, test) partition.

    Valid and test sizes are floored; the remainder goes to train.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"ratios must be three nonnegative numbers summing to 1, got {ratios}")
    n = len(docs)
    order = np.random.default_rng(seed).permutation(n)
    n_valid = int(np.floor(ratios[1] * n + 1e-9))
    n_test = int(np.floor(ratios[2] * n + 1e-9))
    n_train = n - n_valid - n_test
    pick = [docs[i] for i in order]
    return pick[:n_train], pick[n_train : n_train + n_valid], pick[n_train + n_valid :]


def holdout_split(docs: Sequence, n_valid: int, seed: int = 0):
    """(train, valid) with a seeded random validation subset of fixed size."""
    n_valid = min(n_valid, max(len(docs) - 1, 0))
    order = np.random.default_rng(seed).permutation(len(docs))
    pick = [docs[i] for i in order]
    return pick[n_valid:], pick[:n_valid]


# ------------------------------------------------------------------ encoding


@dataclass
class EncodedDoc:
    id: int
    ids: np.ndarray  # vocabulary / charset indices, -1 = zero input
    label: str
    primary: object  # class index or target vector
    missing: np.ndarray | None = None  # removed-word vector, None if nothing eligible


@dataclass
class AutoTarget:
    """Per-step targets are (T, B[, d]) with (T, B) mask; final-step are (B, d) with (B,) mask."""

    targets: np.ndarray
    mask: np.ndarray


@dataclass
class Batch:
    inputs: np.ndarray  # (T, B, input_size)
    lengths: np.ndarray  # (B,)
    mask: np.ndarray  # (T, B)
    primary: np.ndarray  # (B,) class ids or (B, d) vectors
    auto: dict[str, AutoTarget] = field(default_factory=dict)
    labels: list[str] = field(default_factory=list)
    doc_ids: list[int] = field(default_factory=list)

    @property
    def size(self) -> int:
        return int(self.lengths.shape[0])

    @property
    def steps(self) -> int:
        return int(self.inputs.shape[0])


class DocumentEncoder:
    """Turns documents into index sequences and batches for one model setup.

    ``mode`` is ``"word"`` (inputs are embeddings from ``store``) or
    ``"char"`` (inputs are one-hot over ``charset``).  Primary labels are
    class names (``label_names``) or tokens regressed onto ``label_store``.
    """

    def __init__(self, mode: str, *, store: EmbeddingStore | None = None, charset: Charset | None = None,
                 label_names: Sequence[str] | None = None, label_store: EmbeddingStore | None = None,
                 auto_kinds: Sequence[str] = (), stopwords: Iterable[str] | None = None,
                 max_len: int | None = None, seed: int = 0):
        if mode not in ("word", "char"):
            raise ValueError(f"mode must be 'word' or 'char', got {mode!r}")
        if mode == "word" and store is None:
            raise ValueError("word mode needs an embedding store")
        if (label_names is None) == (label_store is None):
            raise ValueError("give exactly one of label_names / label_store")
        self.mode = mode
        self.store = store
        self.charset = charset or (load_charset() if mode == "char" else None)
        self.label_names = list(label_names) if label_names is not None else None
        self.label_index = {l: i for i, l in enumerate(self.label_names or [])}
        self.label_store = label_store
        self.auto_kinds = tuple(auto_kinds)
        self.stopwords = frozenset(stopwords) if stopwords is not None else load_stopwords()
        self.max_len = max_len or DEFAULT_MAX_LEN[mode]
        self.seed = seed
        if "missing_word" in self.auto_kinds and mode != "word":
            raise ValueError("missing-word completion needs word inputs")
        if "next_word" in self.auto_kinds and mode != "word":
            raise ValueError("next-word prediction needs word inputs")
        if "next_char" in self.auto_kinds and mode != "char":
            raise ValueError("next-char prediction needs char inputs")
        if mode == "word":
            self._table = np.vstack([store.vectors, np.zeros((1, store.dim))])

    @property
    def input_size(self) -> int:
        return self.store.dim if self.mode == "word" else self.charset.size

    @property
    def classification(self) -> bool:
        return self.label_names is not None

    @property
    def primary_size(self) -> int:
        return len(self.label_names) if self.classification else self.label_store.dim

    def primary_target(self, label: str):
        if self.classification:
            try:
                return self.label_index[label]
            except KeyError:
                raise UnknownLabel(label) from None
        tok = normalize_hashtag(label)
        return self.label_store.vector(tok)

    def label_token(self, label: str) -> str:
        return label if self.classification else normalize_hashtag(label)

    def encode(self, docs: Iterable[Document]) -> list[EncodedDoc]:
        out, empty = [], 0
        for d in docs:
            if self.mode == "word":
                toks = tokenize_words(d.text)[: self.max_len]
                ids = np.array([self.store.index.get(t, -1) for t in toks], dtype=np.intp)
            else:
                toks = None
                ids = np.array(tokenize_chars(d.text, self.charset)[: self.max_len], dtype=np.intp)
            if ids.size == 0:
                empty += 1
                continue
            missing = None
            if "missing_word" in self.auto_kinds:
                rng = np.random.default_rng(self.seed ^ int(d.id))
                pos = eligible_positions(toks, self.stopwords, self.store)
                if pos:
                    j = pos[int(rng.integers(len(pos)))]
                    missing = self.store.vectors[ids[j]].copy()
                    ids = ids.copy()
                    ids[j] = -1  # UNK is presented as a zero vector
            out.append(EncodedDoc(int(d.id), ids, d.label, self.primary_target(d.label), missing))
        if empty:
            log.info("dropped %d documents with no tokens", empty)
        return out

    def masked_tokens(self, doc: Document) -> list[str]:
        """The word tokens the model sees for ``doc``, with the blanked word as ``UNK``."""
        toks = tokenize_words(doc.text)[: self.max_len]
        rng = np.random.default_rng(self.seed ^ int(doc.id))
        pos = eligible_positions(toks, self.stopwords, self.store)
        if not pos:
            raise NoEligibleToken("no in-vocabulary non-stop-word to mask")
        j = pos[int(rng.integers(len(pos)))]
        return toks[:j] + [UNK] + toks[j + 1 :]

    def batch(self, docs: Sequence[EncodedDoc]) -> Batch:
        B = len(docs)
        lengths = np.array([d.ids.size for d in docs], dtype=np.intp)
        T = int(lengths.max())
        ids = np.full((T, B), -1, dtype=np.intp)
        for j, d in enumerate(docs):
            ids[: d.ids.size, j] = d.ids
        mask = np.arange(T)[:, None] < lengths[None, :]
        if self.mode == "word":
            inputs = self._table[ids]
        else:
            inputs = np.zeros((T, B, self.charset.size))
            t_idx, b_idx = np.nonzero(ids >= 0)
            inputs[t_idx, b_idx, ids[t_idx, b_idx]] = 1.0
        if self.classification:
            primary = np.array([d.primary for d in docs], dtype=np.intp)
        else:
            primary = np.stack([d.primary for d in docs])
        nxt = np.full((T, B), -1, dtype=np.intp)
        nxt[:-1] = ids[1:]
        next_valid = (nxt >= 0) & mask
        auto = {}
        for kind in self.auto_kinds:
            if kind == "next_word":
                auto[kind] = AutoTarget(self._table[nxt], next_valid)
            elif kind == "next_char":
                auto[kind] = AutoTarget(np.where(next_valid, nxt, 0), next_valid)
            elif kind == "missing_word":
                tgt = np.zeros((B, self.store.dim))
                ok = np.zeros(B, dtype=bool)
                for j, d in enumerate(docs):
                    if d.missing is not None:
                        tgt[j], ok[j] = d.missing, True
                auto[kind] = AutoTarget(tgt, ok)
            else:
                raise ValueError(f"unknown automated task {kind!r}")
        return Batch(inputs, lengths, mask, primary, auto,
                     [d.label for d in docs], [d.id for d in docs])


def make_batches(docs: Sequence, encoder: DocumentEncoder, batch_size: int = 128, seed: int = 0,
                 epoch: int = 0, shuffle: bool = True) -> list[Batch]:
    """Seeded per-epoch shuffle, then consecutive batches; the last may be partial."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if docs and isinstance(docs[0], Document):
        docs = encoder.encode(docs)
    if not docs:
        raise EmptyDataset("no documents to batch")
    order = np.random.default_rng([seed, epoch]).permutation(len(docs)) if shuffle else np.arange(len(docs))
    return [encoder.batch([docs[i] for i in order[s : s + batch_size]])
            for s in range(0, len(docs), batch_size)]
