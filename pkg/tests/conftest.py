import numpy as np
import pytest

from automtl.embeddings import EmbeddingStore
from automtl.synthetic import write_twitter_fixture


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def small_store():
    tokens = ["the", "cat", "sat", "on", "mat", "dog", "ran"]
    vecs = np.random.default_rng(3).uniform(-0.5, 0.5, size=(len(tokens), 4))
    return EmbeddingStore(tokens, vecs)


@pytest.fixture
def twitter_fixture(tmp_path):
    return write_twitter_fixture(tmp_path / "tw")


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
