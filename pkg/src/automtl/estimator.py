"""scikit-learn estimator wrapper around the training harness.

    >>> clf = AutoMTLClassifier(embeddings=store, topology="mrnn", epochs=5)
    >>> clf.fit(texts, labels).score(test_texts, test_labels)

``X`` is a sequence of raw document strings.  Because the estimator follows
the ``get_params``/``set_params`` contract it can sit inside a
:class:`~sklearn.pipeline.Pipeline` or be cloned by
:class:`~sklearn.model_selection.GridSearchCV`.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted, check_random_state

from .corpus import Document, DocumentEncoder, load_stopwords
from .embeddings import EmbeddingStore, load_embeddings
from .harness import History, evaluate, predict_primary, train_model
from .models import ModelSpec, TaskSpec, automated_task, build_model


def check_texts(X, name: str = "X") -> list[str]:
    """Accept a 1-D sequence of strings; reject matrices and non-text entries."""
    if isinstance(X, str):
        raise ValueError(f"{name} must be a sequence of documents, not a single string")
    arr = np.asarray(X, dtype=object)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D (one document per entry), got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not all(isinstance(x, str) for x in arr):
        raise TypeError(f"every entry of {name} must be a str")
    return list(arr)


class AutoMTLClassifier(ClassifierMixin, BaseEstimator):
    """LSTM document classifier trained jointly with automated auxiliary tasks.

    Parameters
    ----------
    embeddings : EmbeddingStore or str
        Word vectors (or a path to a word2vec text file) used as inputs.
    topology : {"baseline", "mrnn", "crnn"}
    auto_tasks : tuple of str
        Automated tasks for MTL topologies: ``next_word``, ``missing_word``.
    lr : float
        Fixed Adam learning rate, used when ``lr_actual`` is None.
    lr_actual : float or None
        Enables the scheduled hand-over from automated to primary loss; the
        value is the total learning rate.
    """

    def __init__(self, embeddings=None, topology: str = "mrnn", auto_tasks: Sequence[str] = ("next_word",),
                 hidden_size: int = 128, fc_size: int | None = None, epochs: int = 10, batch_size: int = 128,
                 lr: float = 1e-3, lr_actual: float | None = None, clip_norm: float = 1.0, max_len: int = 64,
                 stopwords=None, random_state=None):
        self.embeddings = embeddings
        self.topology = topology
        self.auto_tasks = auto_tasks
        self.hidden_size = hidden_size
        self.fc_size = fc_size
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_actual = lr_actual
        self.clip_norm = clip_norm
        self.max_len = max_len
        self.stopwords = stopwords
        self.random_state = random_state

    def _store(self) -> EmbeddingStore:
        if isinstance(self.embeddings, EmbeddingStore):
            return self.embeddings
        if self.embeddings is None:
            raise ValueError("embeddings must be an EmbeddingStore or a path")
        return load_embeddings(self.embeddings)

    def _docs(self, X, y=None) -> list[Document]:
        labels = [""] * len(X) if y is None else [str(v) for v in y]
        return [Document(i, text, label) for i, (text, label) in enumerate(zip(X, labels))]

    def fit(self, X, y, X_valid=None, y_valid=None):
        X = check_texts(X)
        y = np.asarray(y)
        if y.ndim != 1 or y.shape[0] != len(X):
            raise ValueError(f"y must be 1-D with {len(X)} entries, got shape {y.shape}")
        check_classification_targets(y)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if self.topology not in ("baseline", "mrnn", "crnn"):
            raise ValueError(f"unknown topology {self.topology!r}")
        seed = int(check_random_state(self.random_state).randint(np.iinfo(np.int32).max))
        store = self._store()
        auto = () if self.topology == "baseline" else tuple(self.auto_tasks)
        stopwords = self.stopwords if self.stopwords is None or not isinstance(self.stopwords, str) \
            else load_stopwords(self.stopwords)
        self.encoder_ = DocumentEncoder(
            "word", store=store, label_names=[str(i) for i in range(len(self.classes_))],
            auto_kinds=auto, stopwords=stopwords, max_len=self.max_len, seed=seed,
        )
        spec = ModelSpec(self.topology, store.dim, self.hidden_size, self.fc_size or self.hidden_size,
                         TaskSpec("primary", "classification", len(self.classes_)),
                         tuple(automated_task(a, store.dim) for a in auto))
        self.model_ = build_model(spec, seed)
        train = self.encoder_.encode(self._docs(X, y_idx))
        if len(train) != len(X):
            raise ValueError("some documents contain no tokens after tokenization")
        valid = []
        if X_valid is not None:
            valid = self.encoder_.encode(self._docs(check_texts(X_valid, "X_valid"), self._encode_labels(y_valid)))
        scheduled = self.lr_actual is not None and auto
        self.history_: History = train_model(
            self.model_, self.encoder_, train, valid, epochs=self.epochs,
            lr_mode="scheduled" if scheduled else "fixed", lr=self.lr_actual if scheduled else self.lr,
            clip_norm=self.clip_norm, batch_size=self.batch_size, seed=seed,
        )
        self.n_features_in_ = store.dim
        return self

    def _encode_labels(self, y) -> np.ndarray:
        y = np.asarray(y)
        idx = np.searchsorted(self.classes_, y)
        idx = np.clip(idx, 0, len(self.classes_) - 1)
        if not np.array_equal(self.classes_[idx], y):
            raise ValueError("y contains labels not seen during fit")
        return idx

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_texts(X)
        # encode with dummy label 0; predictions only read inputs
        docs = self.encoder_.encode([Document(i, t, "0") for i, t in enumerate(X)])
        if len(docs) != len(X):
            raise ValueError("some documents contain no tokens after tokenization")
        return predict_primary(self.model_, docs, self.encoder_)

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.classes_[self.predict_proba(X).argmax(axis=1)]

    def task_metrics(self, X, y) -> dict:
        """Loss/accuracy for the primary and every automated task on ``(X, y)``."""
        check_is_fitted(self, "model_")
        docs = self.encoder_.encode(self._docs(check_texts(X), self._encode_labels(y)))
        return evaluate(self.model_, docs, self.encoder_)
