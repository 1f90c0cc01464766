"""Supervision derived from the documents themselves.

Three auxiliary tasks need no labels: predicting the next word's embedding,
predicting the next character, and recovering a word that was blanked out
of the document.  Regression outputs are decoded back to tokens by cosine
ranking against an :class:`EmbeddingStore`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Collection, Sequence

import numpy as np

from .embeddings import EmbeddingStore
from .errors import CharOutOfCharset, NoEligibleToken, TooShort, UnknownLabel

UNK = "UNK"


@dataclass
class AutoExample:
    """Step-aligned inputs/targets; ``mask[t]`` is False where step t carries no loss."""

    inputs: np.ndarray
    targets: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if not len(self.inputs) == len(self.targets) == len(self.mask):
            raise ValueError("inputs, targets and mask must have equal length")

    def supervised_pairs(self):
        return [(self.inputs[t], self.targets[t]) for t in np.flatnonzero(self.mask)]


@dataclass
class MaskedDoc:
    tokens: list[str]
    position: int
    removed_token: str
    target_vector: np.ndarray


def next_word_targets(tokens: Sequence[str], store: EmbeddingStore) -> AutoExample:
    """Input t is token t's embedding, target t is token t+1's.

    Steps whose next token is out of vocabulary are masked, as is the last
    step.  OOV inputs are zero vectors.
    """
    n = len(tokens)
    if n < 2:
        raise TooShort("next-word targets need at least 2 tokens")
    idx = [store.index.get(t, -1) for t in tokens]
    if all(i < 0 for i in idx):
        raise TooShort("document has no in-vocabulary tokens")
    table = np.vstack([store.vectors, np.zeros((1, store.dim))])
    vecs = table[idx]
    targets = np.zeros_like(vecs)
    targets[:-1] = vecs[1:]
    mask = np.zeros(n, dtype=bool)
    mask[:-1] = np.asarray(idx[1:]) >= 0
    return AutoExample(vecs, targets, mask)


def next_char_targets(chars: Sequence[int], charset_size: int = 66) -> AutoExample:
    """One-hot input at t, class id of character t+1 as target; last step masked."""
    ids = np.asarray(chars, dtype=np.intp)
    if ids.size < 2:
        raise TooShort("next-char targets need at least 2 characters")
    if ids.min() < 0 or ids.max() >= charset_size:
        raise CharOutOfCharset(f"character id outside [0, {charset_size})")
    inputs = np.zeros((ids.size, charset_size))
    inputs[np.arange(ids.size), ids] = 1.0
    targets = np.zeros(ids.size, dtype=np.intp)
    targets[:-1] = ids[1:]
    mask = np.ones(ids.size, dtype=bool)
    mask[-1] = False
    return AutoExample(inputs, targets, mask)


def eligible_positions(tokens: Sequence[str], stopwords: Collection[str], store: EmbeddingStore) -> list[int]:
    return [i for i, t in enumerate(tokens) if t not in stopwords and t != UNK and t in store]


def missing_word_example(tokens: Sequence[str], stopwords: Collection[str], store: EmbeddingStore,
                         rng: np.random.Generator) -> MaskedDoc:
    """Blank one uniformly chosen in-vocabulary non-stop-word with ``UNK``."""
    pos = eligible_positions(tokens, stopwords, store)
    if not pos:
        raise NoEligibleToken("no in-vocabulary non-stop-word to mask")
    j = pos[int(rng.integers(len(pos)))]
    masked = list(tokens)
    removed = masked[j]
    masked[j] = UNK
    return MaskedDoc(masked, j, removed, store.vector(removed).copy())


def decode_nearest(v, store: EmbeddingStore, k: int) -> list[str]:
    return store.nearest(v, k)


def topk_size(fraction: float, vocab_size: int) -> int:
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    # round before ceil so 0.05 * 80 does not become 5 through float error
    return max(1, math.ceil(round(fraction * vocab_size, 9)))


def topk_match(pred, target_label: str, store: EmbeddingStore, fraction: float = 0.05) -> bool:
    """True iff ``target_label`` is among the top ``ceil(fraction * |V|)`` cosine neighbours."""
    if target_label not in store:
        raise UnknownLabel(target_label)
    k = topk_size(fraction, len(store))
    return target_label in decode_nearest(pred, store, k)


def topk_match_rate(preds: np.ndarray, labels: Sequence[str], store: EmbeddingStore,
                    fraction: float = 0.05) -> float:
    """Vectorised :func:`topk_match` over rows of ``preds``."""
    preds = np.asarray(preds, dtype=np.float64)
    if len(labels) == 0:
        return float("nan")
    k = topk_size(fraction, len(store))
    target_idx = np.array([store.index[l] if l in store else -1 for l in labels])
    if (target_idx < 0).any():
        raise UnknownLabel(labels[int(np.flatnonzero(target_idx < 0)[0])])
    hits = 0
    for row, ti in zip(preds, target_idx):
        scores = store.cosine_scores(row)
        # stable descending rank: count strictly better, plus equal scores at lower index
        better = np.count_nonzero(scores > scores[ti]) + np.count_nonzero(scores[:ti] == scores[ti])
        hits += better < k
    return hits / len(labels)
