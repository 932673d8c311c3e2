import csv
import json

import numpy as np
import pytest

from mxpool import tensor as T
from mxpool.cli import main, parse_num_networks, read_config_file
from mxpool.exceptions import ConfigurationError

FAST = ["--dims", "8,12", "--ratios", "0.25,0.5", "--num-conv-nets", "2", "--num-pool-nets", "2",
        "--gcn-steps", "2", "--pool-hidden", "8", "--batch-size", "10"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_stats(capsys, tu_root, tmp_path):
    code, out, _ = run(capsys, "stats", "--dataset-dir", tu_root, "--dataset", "SHAPES", "--csv", tmp_path / "s.csv")
    assert code == 0
    assert "graphs    40" in out and "classes   2" in out
    rows = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert rows[0]["graphs"] == "40"


def test_stats_uses_env_root(capsys, tu_root, monkeypatch):
    monkeypatch.setenv("MXPOOL_DATA_ROOT", str(tu_root))
    assert run(capsys, "stats", "--dataset", "SHAPES")[0] == 0


def test_missing_dataset(capsys, tmp_path):
    code, _, err = run(capsys, "stats", "--dataset-dir", tmp_path, "--dataset", "NOPE")
    assert code == 2
    assert "NOPE_A.txt" in err


def test_cv_outputs(capsys, tu_root, tmp_path):
    out_dir = tmp_path / "run"
    args = ["cv", "--dataset-dir", tu_root, "--dataset", "SHAPES", *FAST, "--epochs", "1", "--folds", "3",
            "--repeats", "2", "--out-dir", out_dir]
    code, out, _ = run(capsys, *args)
    assert code == 0
    assert "MCMP:" in out and "±" in out
    report = list(csv.DictReader(open(out_dir / "report.csv")))
    assert len(report) == 6
    assert len(list((out_dir / "checkpoints").glob("*.ckpt"))) == 6
    summary = json.loads((out_dir / "summary.json").read_text())
    assert summary["mean"] == pytest.approx(np.mean([float(r["accuracy"]) for r in report]))

    first = (out_dir / "report.csv").read_bytes(), (out_dir / "attention.csv").read_bytes()
    run(capsys, *args)
    assert first == ((out_dir / "report.csv").read_bytes(), (out_dir / "attention.csv").read_bytes())


def test_cv_mode_comparison(capsys, tu_root, tmp_path):
    for mode in ("SCSP", "MCMP"):
        code, out, _ = run(capsys, "cv", "--dataset-dir", tu_root, "--dataset", "SHAPES", *FAST, "--epochs", "1",
                           "--folds", "3", "--repeats", "1", "--mode", mode, "--out-dir", tmp_path / mode)
        assert code == 0 and out.startswith(mode)
    a = list(csv.DictReader(open(tmp_path / "SCSP" / "report.csv")))
    b = list(csv.DictReader(open(tmp_path / "MCMP" / "report.csv")))
    assert [(r["fold"], r["seed"], r["n_test"]) for r in a] == [(r["fold"], r["seed"], r["n_test"]) for r in b]


def test_num_networks_sweep(capsys, tu_root, tmp_path):
    code, out, _ = run(capsys, "cv", "--dataset-dir", tu_root, "--dataset", "SHAPES", *FAST, "--epochs", "0",
                       "--folds", "2", "--repeats", "1", "--num-networks", "1..3", "--out-dir", tmp_path)
    assert code == 0
    assert [line.split()[0] for line in out.splitlines()] == ["networks=1", "networks=2", "networks=3"]
    for k in (1, 2, 3):
        summary = json.loads((tmp_path / f"networks_{k}" / "summary.json").read_text())
        assert len(summary["networks"][0]) == k


def test_parse_num_networks():
    assert parse_num_networks("1..5") == [1, 2, 3, 4, 5]
    assert parse_num_networks("3") == [3]
    for bad in ("0..2", "3..1", "a"):
        with pytest.raises(ConfigurationError):
            parse_num_networks(bad)


def test_invalid_combination_rejected_before_training(capsys, tu_root, tmp_path):
    code, _, err = run(capsys, "cv", "--dataset-dir", tu_root, "--dataset", "SHAPES", "--folds", "1",
                       "--out-dir", tmp_path)
    assert code == 2 and "--folds" in err
    assert not (tmp_path / "report.csv").exists()
    with pytest.raises(SystemExit) as exc:
        main(["cv", "--mode", "xyz"])
    assert exc.value.code == 2


def test_inspect_attention(capsys, tu_root, tmp_path):
    run(capsys, "cv", "--dataset-dir", tu_root, "--dataset", "SHAPES", *FAST, "--epochs", "1", "--folds", "5",
        "--repeats", "1", "--out-dir", tmp_path)
    for prop in ("nodes", "edges", "avg_degree"):
        code, out, _ = run(capsys, "inspect-attention", "--report-dir", tmp_path, "--property", prop,
                           "--buckets", "5")
        assert code == 0
        rows = list(csv.DictReader(open(tmp_path / f"attention_buckets_{prop}.csv")))
        assert 1 <= len(rows) <= 5
        for r in rows:
            assert abs(float(r["alpha_0"]) + float(r["alpha_1"]) - 1) < 1e-6
            assert abs(float(r["beta_0"]) + float(r["beta_1"]) - 1) < 1e-6


def test_inspect_attention_missing_log(capsys, tmp_path):
    code, _, err = run(capsys, "inspect-attention", "--report-dir", tmp_path)
    assert code == 2 and str(tmp_path / "attention.csv") in err


def test_train_then_eval(capsys, tu_root, tmp_path):
    common = ["--dataset-dir", tu_root, "--dataset", "SHAPES", *FAST]
    code, out, _ = run(capsys, "train", *common, "--epochs", "3", "--out-dir", tmp_path)
    assert code == 0
    trained = out.split()[2]
    code, out, _ = run(capsys, "eval", *common, "--checkpoint", tmp_path / "model.ckpt")
    assert code == 0 and out.split()[2] == trained

    wrong = [("8,16" if a == "8,12" else a) for a in common]
    code, _, err = run(capsys, "eval", *wrong, "--checkpoint", tmp_path / "model.ckpt")
    assert code == 2
    assert "layer0.conv1.W0" in err


def test_eval_zero_classifier_predicts_class_zero(capsys, tu_root, tmp_path):
    common = ["--dataset-dir", tu_root, "--dataset", "SHAPES", *FAST]
    run(capsys, "train", *common, "--epochs", "0", "--out-dir", tmp_path)
    tensors, meta = T.load_checkpoint(tmp_path / "model.ckpt")
    tensors["classifier.W"][...] = 0.0
    tensors["classifier.b"][...] = 0.0
    T.save_checkpoint(tmp_path / "model.ckpt", tensors, meta)
    code, out, _ = run(capsys, "eval", *common, "--checkpoint", tmp_path / "model.ckpt", "--split", "all")
    assert code == 0
    # all logits tie, and ties go to the lowest class index
    assert float(out.split()[2]) == pytest.approx(20 / 40)


def test_config_file(capsys, tu_root, tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text(
        f"[data]\ndataset_dir = {tu_root}\ndataset = SHAPES\n"
        "[model]\ndims = 8,12\nratios = 0.25,0.5\nnum_conv_nets = 2\nnum_pool_nets = 2\ngcn_steps = 2\n"
        "pool_hidden = 8\n[train]\nepochs = 0\nfolds = 2\nrepeats = 1\n"
    )
    values = read_config_file(cfg)
    assert values["dims"] == (8, 12) and values["epochs"] == 0
    code, _, _ = run(capsys, "cv", "--config", cfg, "--folds", "3", "--out-dir", tmp_path / "o")
    assert code == 0
    assert len(list(csv.DictReader(open(tmp_path / "o" / "report.csv")))) == 3

    bad = tmp_path / "bad.ini"
    bad.write_text("[train]\nlearning_rate = 0.1\n")
    code, _, err = run(capsys, "cv", "--config", bad)
    assert code == 2 and "learning_rate" in err
    bad.write_text("[optim]\nlr = 0.1\n")
    assert run(capsys, "cv", "--config", bad)[0] == 2
