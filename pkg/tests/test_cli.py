import json
import subprocess
import sys

import pytest

from memonet.cli import main
from memonet.tasks.container import read_container

TINY = ["--epochs", "1", "--updates-per-epoch", "2", "--batch-size", "4", "--eval-items", "6",
        "--n-hops", "2"]


def test_train_then_eval_and_resume(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--out", str(out), *TINY]) == 0
    assert (out / "config.json").exists()
    assert len((out / "metrics.jsonl").read_text().splitlines()) == 2
    capsys.readouterr()
    assert main(["eval", str(out / "last.ckpt"), "--items", "6",
                 "--json", str(tmp_path / "r.json")]) == 0
    text = capsys.readouterr().out
    assert "A-C" in text and "mean hops" in text
    assert "types" in json.loads((tmp_path / "r.json").read_text())
    # resume of a finished run is a no-op that still reports
    assert main(["train", "--out", str(out), "--resume"]) == 0


def test_train_from_config_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": "emn", "epochs": 1, "updates_per_epoch": 1,
                               "batch_size": 4, "eval_items": 6}))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 0


def test_gen_pai_container(tmp_path):
    path = tmp_path / "pai.bin"
    assert main(["gen-pai", "--count", "10", "--out", str(path)]) == 0
    meta, fields = read_container(path)
    assert meta["task"] == "pai"
    assert fields["memory_classes"].shape == (10, 32, 3)
    assert (fields["kind"] == 0).sum() == 5


def test_gen_graph_container(tmp_path):
    path = tmp_path / "g.bin"
    assert main(["gen-graph", "--n-nodes", "20", "--out-degree", "3", "--path-length", "3",
                 "--count", "5", "--out", str(path)]) == 0
    _, fields = read_container(path)
    assert fields["description"].shape == (5, 60, 2)
    assert fields["targets"].shape == (5, 2)


def test_known_errors_exit_2(tmp_path, capsys):
    assert main(["eval", str(tmp_path / "missing.ckpt")]) == 2
    assert "error" in capsys.readouterr().err
    assert main(["ingest-babi", "--path", str(tmp_path), "--out", str(tmp_path / "o")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"task": "chess"}')
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2


def test_ingest_babi_uses_data_root(tmp_path, monkeypatch):
    root = tmp_path / "babi" / "en-10k"
    root.mkdir(parents=True)
    for t in range(1, 21):
        for split in ("train", "test"):
            (root / f"qa{t}_t_{split}.txt").write_text("1 Mary went home.\n2 Where is Mary?\thome\t1\n")
    monkeypatch.setenv("MEMONET_DATA_ROOT", str(tmp_path))
    assert main(["ingest-babi", "--out", str(tmp_path / "o")]) == 0
    _, f = read_container(tmp_path / "o" / "test.bin")
    assert f["stories"].shape == (20, 320, 11)


def test_gradcheck_subcommand():
    out = subprocess.run([sys.executable, "-m", "memonet", "gradcheck", "--seeds", "1"],
                         capture_output=True, text=True)
    assert out.returncode == 0
    assert "PASS" in out.stdout


def test_unknown_subcommand():
    with pytest.raises(SystemExit):
        main(["dance"])
