import csv
import subprocess
import sys

import pytest

from chardep.cli import main
from chardep.corpus_io import MASK_CHAR, read_conll, write_conll
from chardep.synthetic import toy_corpus

SMALL = ["--word-dim", "6", "--tag-dim", "3", "--label-dim", "3", "--char-dim", "4", "--kernel-lengths", "3,5",
         "--channels", "3", "--char-length", "9", "--token-dim", "5", "--hidden1", "8", "--hidden2", "6"]  # fmt: skip


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    corpus = toy_corpus(30, seed=5)
    (d / "train.conll").write_text(write_conll(corpus[:20]), encoding="utf-8")
    (d / "dev.conll").write_text(write_conll(corpus[20:]), encoding="utf-8")
    return d


def run_train(files, out, *extra):
    args = ["train", "--train", str(files / "train.conll"), "--dev", str(files / "dev.conll"), "--out", str(out)]
    return main(args + SMALL + ["--steps", "40", "--eval-every", "20", "--batch-size", "20", "--log-every", "10", *extra])


def test_train_parse_eval(files, tmp_path, capsys):
    model = tmp_path / "m.bin"
    assert run_train(files, model, "--mode", "cnn") == 0
    assert model.exists()
    with open(str(model) + ".log.tsv", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh, delimiter="\t"))
    assert [int(r["step"]) for r in rows if r["event"] == "eval"] == [20, 40]
    assert [int(r["step"]) for r in rows if r["event"] == "train"] == [0, 10, 20, 30]
    assert "mode CNN" in capsys.readouterr().out

    pred = tmp_path / "pred.conll"
    assert main(["parse", "--model", str(model), "--input", str(files / "dev.conll"), "--output", str(pred)]) == 0
    assert len(read_conll(pred.read_text(encoding="utf-8"))) == 10

    assert main(["eval", str(files / "dev.conll"), str(files / "dev.conll")]) == 0
    assert "100.00" in capsys.readouterr().out
    assert main(["eval", str(files / "dev.conll"), str(pred), "--vocab", str(model), "--tsv", str(tmp_path / "r.tsv")]) == 0
    out = capsys.readouterr().out
    counts = [line.split()[1] for line in out.splitlines() if line.startswith(("IV:", "OOV:"))]
    total = sum(len(s) for s in read_conll((files / "dev.conll").read_text(encoding="utf-8")))
    assert sum(int(c.split("/")[1]) for c in counts) == total
    assert (tmp_path / "r.tsv").read_text().startswith("run\tLAS\tUAS\tdLAS\tIV\tOOV")


def test_train_same_seed_same_bytes(files, tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    assert run_train(files, a, "--seed", "3") == 0
    assert run_train(files, b, "--seed", "3") == 0
    assert a.read_bytes() == b.read_bytes()


def test_config_file_and_override(files, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# hyperparameters\nmode = lstm\nlstm_hidden = 2\nsteps = 1000\n", encoding="utf-8")
    model = tmp_path / "m.bin"
    assert run_train(files, model, "--config", str(cfg)) == 0  # --steps 40 on the command line wins
    from chardep.parser import load

    m = load(model)
    assert m.mode == "LSTM" and m.repr_config.lstm_hidden == 2


def test_w2v_requires_embeddings(files, tmp_path):
    with pytest.raises(SystemExit) as exc:
        run_train(files, tmp_path / "m.bin", "--mode", "w2v")
    assert exc.value.code == 2


def test_w2v_with_embeddings(files, tmp_path):
    emb = tmp_path / "vec.txt"
    emb.write_text("2 6\n. 1 2 3 4 5 6\nunseen 1 1 1 1 1 1\n", encoding="utf-8")
    assert run_train(files, tmp_path / "m.bin", "--mode", "cnn+w2v", "--embeddings", str(emb)) == 0


def test_unknown_mode_and_bad_config(files, tmp_path):
    with pytest.raises(SystemExit):
        run_train(files, tmp_path / "m.bin", "--mode", "gru")
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n", encoding="utf-8")
    with pytest.raises(SystemExit):
        run_train(files, tmp_path / "m.bin", "--config", str(cfg))


def test_parse_errors(tmp_path, files, capsys):
    assert main(["parse", "--model", str(tmp_path / "none.bin"), "--input", str(files / "dev.conll"), "--output", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert err.startswith("chardep parse: error:") and len(err.strip().splitlines()) == 1


def test_parse_empty_input(files, tmp_path):
    model = tmp_path / "m.bin"
    run_train(files, model)
    empty, out = tmp_path / "empty.conll", tmp_path / "out.conll"
    empty.write_text("", encoding="utf-8")
    assert main(["parse", "--model", str(model), "--input", str(empty), "--output", str(out)]) == 0
    assert out.read_text() == ""


def test_mask(tmp_path, capsys):
    src = tmp_path / "in.conll"
    src.write_text("1\tabcdef\t_\t_\tN\t_\t0\troot\t_\t_\n\n", encoding="utf-8")
    assert main(["mask", str(src), "--pattern", "a•c"]) == 0
    assert f"ab{MASK_CHAR * 2}ef" in capsys.readouterr().out
    for pattern in ["_bc", "a_c", "ab_", "a__", "_b_", "__c"]:
        assert main(["mask", str(src), "--pattern", pattern, "--output", str(tmp_path / "o.conll")]) == 0
    with pytest.raises(SystemExit) as exc:
        main(["mask", str(src), "--pattern", "abc"])
    assert exc.value.code == 2


def test_malformed_input_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.conll"
    bad.write_text("1\tx\t_\t_\tN\t_\tzz\troot\t_\t_\n", encoding="utf-8")
    assert main(["mask", str(bad), "--pattern", "a•c"]) == 1
    assert "line 1" in capsys.readouterr().err


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "chardep", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "train" in r.stdout
