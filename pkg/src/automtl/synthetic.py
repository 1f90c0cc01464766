"""Small generated corpora for smoke tests and the toy MTL comparison."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .corpus import Document, write_tsv
from .embeddings import EmbeddingStore

PATTERN = ("pa", "pb")


def planted_bigram_corpus(n_docs: int, seed: int = 0, vocab_size: int = 24, dim: int = 8,
                          min_len: int = 6, max_len: int = 10, store_seed: int = 0):
    """Two-class documents where only word order decides the label.

    Every document holds exactly one ``pa`` and one ``pb``; class ``"1"``
    has them adjacent as ``pa pb``, class ``"0"`` as ``pb pa``.  The rest is
    filler drawn uniformly.  Predicting the word after ``pa`` requires
    knowing whether ``pb`` was already seen, which is the label feature, so
    the next-word task carries real signal.

    Returns ``(docs, store)``; the store covers every token.
    """
    fillers = [f"w{i:02d}" for i in range(vocab_size - 2)]
    tokens = list(PATTERN) + fillers
    srng = np.random.default_rng(store_seed)
    store = EmbeddingStore(tokens, srng.uniform(-0.5, 0.5, size=(len(tokens), dim)))
    rng = np.random.default_rng(seed)
    docs = []
    for i in range(n_docs):
        label = int(rng.integers(2))
        n = int(rng.integers(min_len, max_len + 1))
        body = [fillers[j] for j in rng.integers(len(fillers), size=n - 2)]
        at = int(rng.integers(n - 1))
        pair = list(PATTERN) if label == 1 else list(reversed(PATTERN))
        words = body[:at] + pair + body[at:]
        docs.append(Document(i, " ".join(words), str(label)))
    return docs, store


_TOPICS = {
    "sunny": ["sun", "beach", "warm", "sky", "summer", "bright"],
    "rain": ["wet", "storm", "cloud", "umbrella", "grey", "puddle"],
    "music": ["song", "guitar", "band", "album", "concert", "beat"],
    "food": ["pizza", "lunch", "taste", "cook", "dinner", "spicy"],
    "code": ["bug", "python", "deploy", "commit", "compile", "debug"],
    "sports": ["goal", "match", "team", "score", "coach", "win"],
}


def write_twitter_fixture(directory: str | Path, n_tweets: int = 40, dim: int = 8, seed: int = 0):
    """Write ``tweets.tsv`` (raw, uncleaned) and ``embeddings.txt`` for hashtag regression.

    Some tweets carry URLs, emoji, capitals or are retweets so the cleaning
    path is exercised.  Returns the two paths.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    tags = sorted(_TOPICS)
    lines = []
    for i in range(n_tweets):
        tag = tags[i % len(tags)]
        words = [str(w) for w in rng.choice(_TOPICS[tag], size=int(rng.integers(3, 6)))]
        text = " ".join(words)
        if i % 5 == 0:
            text = text.capitalize() + " http://t.co/x" + str(i)
        if i % 7 == 0:
            text += " \U0001F600!"
        if i % 11 == 3:
            text = "RT @friend " + text
        text += f" #{tag.capitalize()}"
        lines.append(Document(i, text, f"#{tag}"))
    tsv = directory / "tweets.tsv"
    write_tsv(tsv, lines)
    vocab = tags + ["noise", "other", "misc"]
    store = EmbeddingStore(vocab, rng.uniform(-0.5, 0.5, size=(len(vocab), dim)))
    emb = directory / "embeddings.txt"
    store.save(emb)
    return tsv, emb
