import numpy as np
import pytest
from hypothesis import given, strategies as st

from automtl.corpus import (
    Document,
    DocumentEncoder,
    clean_tweet,
    holdout_split,
    load_charset,
    load_stopwords,
    make_batches,
    map_tokens_to_embeddings,
    read_tsv,
    split_dataset,
    tokenize_chars,
    tokenize_words,
    top_labels,
    write_tsv,
)
from automtl.embeddings import EmbeddingStore, load_embeddings
from automtl.errors import BadRatios, DimensionMismatch, Dropped, DuplicateToken, EmptyDataset, MalformedHeader
from automtl.synthetic import planted_bigram_corpus
from automtl.tasks import UNK


def test_clean_tweet_examples():
    assert clean_tweet("Check THIS http://a.b/x \U0001F600") == "check this"
    with pytest.raises(Dropped):
        clean_tweet("RT @u hello")
    assert clean_tweet("nice day #Sunny") == "nice day"
    with pytest.raises(Dropped):
        clean_tweet("#only http://x.y")


@given(st.text(max_size=60))
def test_clean_tweet_idempotent(text):
    try:
        once = clean_tweet(text)
    except Dropped:
        return
    assert clean_tweet(once) == once
    cs = load_charset()
    assert all(c in cs for c in once)


def test_default_charset():
    cs = load_charset()
    assert cs.size == 66
    assert set("abcdefghijklmnopqrstuvwxyz0123456789 ") <= set(cs.chars)
    assert "#" not in cs
    ids = tokenize_chars("hello, world!", cs)
    assert cs.decode(ids) == "hello, world!"
    assert all(cs.decode([i]) == c for c, i in cs.index.items())


def test_stopwords_loaded():
    sw = load_stopwords()
    assert {"the", "a", "of", "and"} <= sw


def test_tokenize_words():
    assert tokenize_words("the cat.") == ["the", "cat", "."]
    assert tokenize_words("") == []
    assert tokenize_words(f"a {UNK} b") == ["a", UNK, "b"]


def test_map_tokens(small_store):
    vecs, ok = map_tokens_to_embeddings(["cat", "zzz"], small_store)
    np.testing.assert_array_equal(vecs[0], small_store.vector("cat"))
    assert not vecs[1].any() and ok.tolist() == [True, False]
    vecs, ok = map_tokens_to_embeddings([], small_store)
    assert vecs.shape == (0, 4) and ok.size == 0


def write(tmp_path, text):
    p = tmp_path / "e.txt"
    p.write_text(text, encoding="utf-8")
    return p


def test_load_embeddings_ok(tmp_path):
    s = load_embeddings(write(tmp_path, "2 3\ncat 1 0 0\ndog 0 1 0\n"))
    assert len(s) == 2 and s.dim == 3


@pytest.mark.parametrize("text,err", [
    ("2\ncat 1 0 0\ndog 0 1 0\n", MalformedHeader),
    ("x y\ncat 1 0 0\n", MalformedHeader),
    ("3 3\ncat 1 0 0\ndog 0 1 0\n", MalformedHeader),
    ("2 3\ncat 1 0\ndog 0 1 0\n", DimensionMismatch),
    ("2 3\ncat 1 0 0\ncat 0 1 0\n", DuplicateToken),
])
def test_load_embeddings_errors(tmp_path, text, err):
    with pytest.raises(err):
        load_embeddings(write(tmp_path, text))


def test_store_save_roundtrip(tmp_path, small_store):
    small_store.save(tmp_path / "s.txt")
    back = load_embeddings(tmp_path / "s.txt")
    assert back.tokens == small_store.tokens
    np.testing.assert_array_equal(back.vectors, small_store.vectors)
    for t in back.tokens:
        assert back.nearest(back.vector(t), 1) == [t]


def test_split_sizes_and_determinism():
    docs = list(range(10))
    tr, va, te = split_dataset(docs, (0.8, 0.1, 0.1), seed=3)
    assert (len(tr), len(va), len(te)) == (8, 1, 1)
    assert sorted(tr + va + te) == docs
    assert split_dataset(docs, (0.8, 0.1, 0.1), seed=3) == (tr, va, te)
    with pytest.raises(BadRatios):
        split_dataset(docs, (0.5, 0.5, 0.1))


@given(st.integers(0, 500), st.integers(0, 99))
def test_split_partition_property(n, seed):
    docs = list(range(n))
    tr, va, te = split_dataset(docs, (0.8, 0.1, 0.1), seed)
    assert sorted(tr + va + te) == docs
    assert len(va) == len(te) == int(0.1 * n + 1e-9)


def test_holdout_split():
    tr, va = holdout_split(list(range(100)), 18, seed=1)
    assert len(va) == 18 and sorted(tr + va) == list(range(100))


def test_tsv_roundtrip_and_top_labels(tmp_path):
    docs = [Document(i, f"text {i}", "ab"[i % 3 == 0]) for i in range(9)]
    write_tsv(tmp_path / "d.tsv", docs)
    back = read_tsv(tmp_path / "d.tsv")
    assert [(d.text, d.label) for d in back] == [(d.text, d.label) for d in docs]
    kept = top_labels(back, 1)
    assert {d.label for d in kept} == {"a"} and len(kept) == 6


def test_batches_sizes_and_permutation():
    docs, store = planted_bigram_corpus(300, seed=0)
    enc = DocumentEncoder("word", store=store, label_names=["0", "1"], auto_kinds=("next_word",))
    batches = make_batches(docs, enc, 128, seed=4, epoch=0)
    assert [b.size for b in batches] == [128, 128, 44]
    seen = sorted(i for b in batches for i in b.doc_ids)
    assert seen == list(range(300))
    by_id = {d.id: d.label for d in docs}
    assert all(by_id[i] == l for b in batches for i, l in zip(b.doc_ids, b.labels))
    again = make_batches(docs, enc, 128, seed=4, epoch=0)
    assert [b.doc_ids for b in again] == [b.doc_ids for b in batches]
    other = make_batches(docs, enc, 128, seed=4, epoch=1)
    assert [b.doc_ids for b in other] != [b.doc_ids for b in batches]
    with pytest.raises(EmptyDataset):
        make_batches([], enc)


def test_batch_contents_padded_and_shifted():
    store = EmbeddingStore(["a", "b", "c"], np.eye(3))
    enc = DocumentEncoder("word", store=store, label_names=["x"], auto_kinds=("next_word",), max_len=3)
    b = enc.batch(enc.encode([Document(0, "a b zzz c", "x"), Document(1, "c", "x")]))
    assert b.inputs.shape == (3, 2, 3) and b.lengths.tolist() == [3, 1]
    assert b.mask[:, 1].tolist() == [True, False, False]
    nw = b.auto["next_word"]
    assert nw.mask[:, 0].tolist() == [True, False, False]  # next of "b" is OOV; last step has none
    np.testing.assert_array_equal(nw.targets[0, 0], store.vector("b"))
    assert not b.inputs[2, 0].any()


def test_missing_word_encoding_is_seeded(small_store):
    stop = {"the", "on"}
    enc = DocumentEncoder("word", store=small_store, label_names=["x"], auto_kinds=("missing_word",),
                          stopwords=stop, seed=5)
    doc = Document(3, "the cat sat on the mat", "x")
    e1, e2 = enc.encode([doc])[0], enc.encode([doc])[0]
    np.testing.assert_array_equal(e1.ids, e2.ids)
    j = int(np.flatnonzero(e1.ids == -1)[0])
    toks = enc.masked_tokens(doc)
    assert toks[j] == UNK and toks.count(UNK) == 1
    np.testing.assert_array_equal(e1.missing, small_store.vector(tokenize_words(doc.text)[j]))
    none = enc.encode([Document(4, "the on", "x")])[0]
    assert none.missing is None
    assert not enc.batch([none]).auto["missing_word"].mask.any()


def test_char_encoder_one_hot():
    enc = DocumentEncoder("char", label_names=["x"], auto_kinds=("next_char",))
    b = enc.batch(enc.encode([Document(0, "ab", "x")]))
    cs = enc.charset
    assert b.inputs.shape == (2, 1, 66)
    assert b.inputs[0, 0].argmax() == cs.index["a"]
    assert b.auto["next_char"].targets[0, 0] == cs.index["b"]
    assert b.auto["next_char"].mask[:, 0].tolist() == [True, False]
