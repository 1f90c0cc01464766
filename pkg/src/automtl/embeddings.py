"""Token-to-vector tables in word2vec text format, with cosine ranking."""
from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, DuplicateToken, MalformedHeader, NonFiniteValue, UnknownLabel, ZeroVector
from .numerics import EPS_NORM


class EmbeddingStore:
    """Immutable vocabulary plus a ``|V| x dim`` matrix.

    Row norms are cached so nearest-neighbour queries are one matrix-vector
    product.
    """

    def __init__(self, tokens: Sequence[str], vectors):
        vectors = np.array(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(tokens):
            raise DimensionMismatch(f"{len(tokens)} tokens but vectors of shape {vectors.shape}")
        if not np.isfinite(vectors).all():
            raise NonFiniteValue("embedding vectors must be finite")
        self.tokens = list(tokens)
        self.index = {}
        for i, tok in enumerate(self.tokens):
            if tok in self.index:
                raise DuplicateToken(f"duplicate token {tok!r}")
            self.index[tok] = i
        self.vectors = vectors
        self.vectors.setflags(write=False)
        self._norms = np.linalg.norm(vectors, axis=1)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token) -> bool:
        return token in self.index

    def __repr__(self):
        return f"EmbeddingStore({len(self)} tokens, dim={self.dim})"

    def vector(self, token: str) -> np.ndarray:
        try:
            return self.vectors[self.index[token]]
        except KeyError:
            raise UnknownLabel(token) from None

    def get(self, token: str):
        i = self.index.get(token)
        return None if i is None else self.vectors[i]

    def subset(self, tokens: Iterable[str]) -> "EmbeddingStore":
        tokens = list(tokens)
        return EmbeddingStore(tokens, np.stack([self.vector(t) for t in tokens]))

    def cosine_scores(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64).reshape(-1)
        if v.shape[0] != self.dim:
            raise DimensionMismatch(f"query of length {v.shape[0]} against dim {self.dim}")
        nv = np.linalg.norm(v)
        if nv < EPS_NORM:
            raise ZeroVector("cannot rank against a zero vector")
        denom = np.maximum(self._norms, EPS_NORM) * nv
        return (self.vectors @ v) / denom

    def nearest(self, v, k: int) -> list[str]:
        """Tokens by descending cosine similarity; ties go to the lower vocabulary index."""
        if k < 1:
            raise ValueError("k must be >= 1")
        scores = self.cosine_scores(v)
        order = np.argsort(-scores, kind="stable")
        return [self.tokens[i] for i in order[: min(k, len(self.tokens))]]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{len(self)} {self.dim}\n")
            for tok, vec in zip(self.tokens, self.vectors):
                fh.write(tok + " " + " ".join(repr(float(x)) for x in vec) + "\n")


def load_embeddings(path: str | Path) -> EmbeddingStore:
    """Read the word2vec text format: ``count dim`` header, then ``token v1 .. vdim`` lines."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        try:
            if len(header) != 2:
                raise ValueError
            count, dim = int(header[0]), int(header[1])
            if count < 0 or dim < 1:
                raise ValueError
        except ValueError:
            raise MalformedHeader(f"{path}: header must be '<count> <dim>', got {header!r}") from None
        tokens, rows = [], []
        seen = set()
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if parts == [""]:
                continue
            if len(parts) != dim + 1:
                raise DimensionMismatch(f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}")
            tok = parts[0]
            if tok in seen:
                raise DuplicateToken(f"{path}:{lineno}: duplicate token {tok!r}")
            seen.add(tok)
            tokens.append(tok)
            rows.append([float(x) for x in parts[1:]])
    if len(tokens) != count:
        raise MalformedHeader(f"{path}: header announces {count} tokens, found {len(tokens)}")
    return EmbeddingStore(tokens, np.array(rows, dtype=np.float64).reshape(count, dim))
