import pytest

from automtl.cli import main
from automtl.corpus import write_tsv
from automtl.synthetic import planted_bigram_corpus


@pytest.fixture
def word_data(tmp_path):
    docs, store = planted_bigram_corpus(60, seed=0)
    write_tsv(tmp_path / "docs.tsv", docs)
    store.save(tmp_path / "emb.txt")
    return tmp_path / "docs.tsv", tmp_path / "emb.txt"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_train_eval_twitter(tmp_path, twitter_fixture, capsys):
    tsv, emb = twitter_fixture
    out = tmp_path / "runs"
    code, stdout, _ = run(capsys, "train", "--preset", "twitter", "--data", tsv, "--embeddings", emb,
                          "--seed", 7, "--epochs", 2, "--output-dir", out)
    assert code == 0 and "best valid accuracy" in stdout
    lines = (out / "metrics_7.csv").read_text().splitlines()
    assert lines[0] == "epoch,split,task,loss,accuracy,lr_prim,lr_auto,wall_seconds"
    assert len(lines) == 1 + 8
    code, stdout, _ = run(capsys, "eval", "--model", out / "model_7" / "best", "--data", tsv)
    assert code == 0
    rows = stdout.splitlines()
    assert rows[1].split(",")[1:3] == ["test", "hashtag"] and rows[2].split(",")[2] == "next_char"


def test_config_file_and_overrides(tmp_path, word_data, capsys):
    tsv, emb = word_data
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"preset = custom\ndata = {tsv}\nembeddings = {emb}\nepochs = 5\nhidden_size = 4\n"
                   f"output_dir = {tmp_path / 'o'}\n")
    code, _, _ = run(capsys, "train", "--config", cfg, "--epochs", 1, "--seed", 3, "--topology", "baseline")
    assert code == 0
    assert len((tmp_path / "o" / "metrics_3.csv").read_text().splitlines()) == 1 + 2


@pytest.mark.parametrize("argv", [
    ["train", "--preset", "twitter"],
    ["train", "--preset", "nope", "--seed", "1"],
    ["train", "--seed", "1", "--epochs", "0"],
    ["frobnicate"],
    ["eval", "--model", "/nonexistent", "--data", "/nonexistent.tsv"],
])
def test_validation_errors_exit_1(argv, capsys):
    code, out, err = run(capsys, *argv)
    assert code == 1 and err.startswith("automtl: error")


def test_runtime_failure_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("nonsense header\n")
    data = tmp_path / "d.tsv"
    data.write_text("1\tsome text here\n" * 20)
    code, _, err = run(capsys, "train", "--data", data, "--embeddings", bad, "--seed", 1)
    assert code == 2 and "MalformedHeader" in err


def test_gradcheck_pass_and_fail(capsys):
    code, out, _ = run(capsys, "gradcheck")
    assert code == 0 and "21/21 checks" in out
    code, out, _ = run(capsys, "gradcheck", "--tolerance", "1e-300")
    assert code == 1 and "FAIL" in out


def test_prep_splits(tmp_path, twitter_fixture, capsys):
    tsv, _ = twitter_fixture
    code, out, _ = run(capsys, "prep", "--preset", "twitter", "--input", tsv, "--output", tmp_path / "p",
                       "--seed", 0)
    assert code == 0
    n = [len((tmp_path / "p" / f"{s}.tsv").read_text().splitlines()) for s in ("train", "valid", "test")]
    assert n[1] == n[2] == int(sum(n) * 0.1) and "kept" in out


def test_compare_prints_table(tmp_path, word_data, capsys):
    tsv, emb = word_data
    code, out, _ = run(capsys, "compare", "--data", tsv, "--embeddings", emb, "--seed", 1, "--epochs", 1,
                       "--hidden-size", 4, "--n-seeds", 1, "--threshold", 0.0, "--output-dir", tmp_path / "c")
    assert code == 0
    assert out.splitlines()[0] == "epochs to reach validation accuracy 0"
    assert [l.split()[0] for l in out.splitlines()[2:]] == ["baseline", "mrnn", "crnn"]


def test_complete_missing_word(tmp_path, word_data, capsys):
    tsv, emb = word_data
    code, _, _ = run(capsys, "train", "--data", tsv, "--embeddings", emb, "--seed", 2, "--epochs", 1,
                     "--hidden-size", 4, "--auto-tasks", "missing_word", "--output-dir", tmp_path / "r")
    assert code == 0
    text = tmp_path / "t.txt"
    text.write_text("w01 pa pb w02\nthe of\n")
    code, out, _ = run(capsys, "complete", "--model", tmp_path / "r" / "model_2" / "final", "--text", text,
                       "--k", 3)
    assert code == 0
    first, second = out.splitlines()
    assert "UNK" in first and "removed=" in first and len(first.split("nearest=")[1].split(",")) == 3
    assert "skipped" in second
    code, _, err = run(capsys, "train", "--data", tsv, "--embeddings", emb, "--seed", 2, "--epochs", 1,
                       "--hidden-size", 4, "--output-dir", tmp_path / "r2")
    code, _, err = run(capsys, "complete", "--model", tmp_path / "r2" / "model_2" / "final", "--text", text)
    assert code == 1 and "missing_word" in err
