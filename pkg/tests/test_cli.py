import csv
import json
from collections import Counter

import pytest

from grover.cli import main

TINY = "classes=2,vocab_size=40,docs_per_class=20,test_docs_per_class=5,doc_len=12,keywords_per_class=2,signal=0.3"
FAST = ["--synthetic", TINY, "--embedding-dim", "8", "--seq-len", "16", "--epochs", "2", "--step-size", "0.5"]


def train(tmp_path, name, *extra):
    out = tmp_path / name
    code = main(["train", *FAST, "--out", str(out), *extra])
    return code, out


def test_train_writes_outputs(tmp_path, capsys):
    code, out = train(tmp_path, "run")
    assert code == 0
    for name in ("config.json", "report.jsonl", "curves.csv", "summary.txt", "checkpoint/manifest.json",
                 "checkpoint/initial.txt"):
        assert (out / name).is_file(), name
    assert not (out / "INCOMPLETE").exists()
    stdout = capsys.readouterr().out
    assert "meta=0 mask=[0,0)" in stdout
    assert stdout.strip().splitlines()[-1].startswith("baseline test_acc=")
    assert len((out / "report.jsonl").read_text().splitlines()) == 3
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["embedding_dim"] == 8 and cfg["policy"] == "gradual"


def test_train_is_byte_deterministic(tmp_path):
    _, a = train(tmp_path, "a", "--seed", "5")
    _, b = train(tmp_path, "b", "--seed", "5")
    for name in ("report.jsonl", "curves.csv", "summary.txt", "checkpoint/embeddings.txt", "checkpoint/params.bin"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    _, c = train(tmp_path, "c", "--seed", "6")
    assert (a / "report.jsonl").read_bytes() != (c / "report.jsonl").read_bytes()


def test_zero_noise_and_other_options(tmp_path):
    code, out = train(tmp_path, "z", "--noise-range", "0", "--policy", "both", "--model", "bow_linear",
                      "--dtype", "float64", "--word-drop", "0.1", "--dropout", "0.2", "--meta-val-fraction", "0.5")
    assert code == 0
    rows = [json.loads(l) for l in (out / "report.jsonl").read_text().splitlines()]
    assert [(r["mask_start"], r["mask_end"]) for r in rows] == [(0, 0), (0, rows[1]["mask_end"]), (0, rows[2]["mask_end"])]


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"synthetic": TINY, "embedding-dim": 8, "seq_len": 16, "epochs": 1, "step_size": 1.0,
                               "seed": 9}))
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--seed", "2", "--out", str(out)]) == 0
    eff = json.loads((out / "config.json").read_text())
    assert eff["seed"] == 2 and eff["embedding_dim"] == 8 and eff["step_size"] == 1.0


def test_train_errors(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path / "x")]) == 1
    assert "data source" in capsys.readouterr().err
    cfg = tmp_path / "bad.json"
    cfg.write_text('{"no_such_key": 1}')
    assert main(["train", "--config", str(cfg), "--synthetic", TINY, "--out", str(tmp_path / "y")]) == 1
    assert main(["train", "--data", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "z")]) == 1
    with pytest.raises(SystemExit):
        main(["train", "--policy", "sideways"])


def test_train_from_csv(tmp_path):
    assert main(["synth", "--spec", TINY, "--out", str(tmp_path / "corpus")]) == 0
    out = tmp_path / "run"
    code = main(["train", "--data", str(tmp_path / "corpus/train.csv"), "--test", str(tmp_path / "corpus/test.csv"),
                 "--embedding-dim", "8", "--seq-len", "16", "--epochs", "1", "--step-size", "1.0", "--out", str(out)])
    assert code == 0
    assert "test_acc" in (out / "summary.txt").read_text()


@pytest.mark.parametrize("spec", ["bogus=1,2", "step_size=", "step_size=0.1,,0.2", "step_size=abc", "noequals"])
def test_sweep_usage_errors(tmp_path, spec, capsys):
    assert main(["sweep", *FAST, "--out", str(tmp_path / "s"), "--sweep", spec]) == 2
    assert "usage" in capsys.readouterr().err


def test_sweep_requires_a_grid(tmp_path):
    assert main(["sweep", *FAST, "--out", str(tmp_path / "s")]) == 2


def test_sweep_runs(tmp_path, capsys):
    out = tmp_path / "s"
    assert main(["sweep", *FAST, "--epochs", "1", "--out", str(out), "--sweep", "noise_range=0.5,2"]) == 0
    rows = [json.loads(l) for l in (out / "sweep.jsonl").read_text().splitlines()]
    assert [r["point"] for r in rows] == [{"noise_range": 0.5}, {"noise_range": 2.0}]
    assert all(r["n"] == 1 for r in rows)
    assert "noise_range=0.5 n=1" in capsys.readouterr().out


def test_analyze(tmp_path, capsys):
    _, out = train(tmp_path, "run")
    capsys.readouterr()
    report = tmp_path / "nn.txt"
    code = main(["analyze", str(out / "checkpoint"), "--cue", "w00001", "--cue", "<pad>", "--cue", "zzz",
                 "-k", "5", "--out", str(report)])
    captured = capsys.readouterr()
    assert code == 1
    assert "<pad>" in captured.err and "zzz" in captured.err
    lines = report.read_text().splitlines()
    assert lines[0].startswith("final w00001: ") and lines[0].count("(") == 5
    assert lines[1].startswith("initial w00001: ")
    assert "jaccard" in lines[2] and lines[3].startswith("drift ")
    assert main(["analyze", str(out / "checkpoint"), "--cue", "w00001", "-k", "3"]) == 0


def test_analyze_missing_checkpoint(tmp_path, capsys):
    assert main(["analyze", str(tmp_path / "nothing"), "--cue", "a"]) == 1
    assert "manifest" in capsys.readouterr().err


def test_synth_balanced(tmp_path):
    out = tmp_path / "c"
    assert main(["synth", "--classes", "3", "--vocab-size", "60", "--docs-per-class", "7",
                 "--test-docs-per-class", "2", "--doc-len", "5", "--out", str(out)]) == 0
    with open(out / "train.csv", newline="") as fh:
        labels = Counter(row[0] for row in csv.reader(fh))
    assert labels == {"0": 7, "1": 7, "2": 7}
    spec = json.loads((out / "spec.json").read_text())
    assert spec["classes"] == 3 and spec["doc_len"] == 5
    assert main(["synth", "--classes", "3", "--vocab-size", "5", "--out", str(out)]) == 1
