import csv
import os
import subprocess
import sys

import numpy as np
import pytest

from patchcontrast.cli import run
from patchcontrast.corpus import load_corpus


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Corpus + split shared by the CLI tests (coarse resolution, fast)."""
    root = tmp_path_factory.mktemp("cli")
    os.chdir(root)
    assert run(
        [
            "synth", "--classes", "3", "--per-class", "12", "--side", "96",
            "--brains", "2", "--sections-per-brain", "3", "--seed", "5",
            "--resolution-um", "8.0", "--out", "corpus",
        ]
    ) == 0
    assert run(["split", "--corpus", "corpus", "--train-fraction", "0.7", "--out", "split.json"]) == 0
    return root


def test_synth_writes_valid_corpus(workdir):
    corpus = load_corpus(str(workdir / "corpus"))
    assert len(corpus) == 36
    assert corpus.manifest.class_count == 3


def test_synth_validation_error_exits_1(tmp_path):
    assert run(["synth", "--classes", "0", "--per-class", "2", "--side", "64", "--out", str(tmp_path / "x")]) == 1


def test_unknown_flag_exits_1():
    assert run(["synth", "--bogus", "1"]) == 1


def test_unknown_command_exits_1():
    assert run(["frobnicate"]) == 1


def test_gradcheck_exits_0(capsys):
    assert run(["gradcheck", "--trials", "2"]) == 0
    out = capsys.readouterr().out
    assert "conv2d" in out and "contrastive_loss" in out


def test_eval_csv_mode(tmp_path, capsys):
    logits = np.array([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 2.0, 1.0]])
    labels = np.array([0, 1, 2])
    np.savetxt(tmp_path / "logits.csv", logits, delimiter=",")
    np.savetxt(tmp_path / "labels.csv", labels, fmt="%d")
    out_csv = tmp_path / "metrics.csv"
    assert run(
        [
            "eval", "--pred", str(tmp_path / "logits.csv"), "--truth", str(tmp_path / "labels.csv"),
            "--k", "3", "--model-name", "fixture", "--dataset-name", "X_te", "--out", str(out_csv),
        ]
    ) == 0
    rows = list(csv.reader(out_csv.open()))
    assert rows[0] == ["model", "dataset", "f1", "top1", "top3"]
    assert rows[1][0] == "fixture"
    assert float(rows[1][3]) == pytest.approx(66.67)  # 2 of 3 argmax correct
    assert float(rows[1][4]) == 100.0


def test_eval_without_inputs_exits_1():
    assert run(["eval"]) == 1


def test_train_eval_cluster_pipeline(workdir):
    common = [
        "--corpus", "corpus", "--split", "split.json", "--epochs", "1",
        "--batch-size", "9", "--per-class-per-epoch", "6", "--patch-side", "32",
    ]
    assert run(["pretrain", *common, "--out", "run_pre"]) == 0
    assert os.path.exists("run_pre/contrastive.ckpt")
    assert os.path.exists("run_pre/config.txt")
    assert os.path.exists("run_pre/runlog.csv")

    assert run(["probe", *common, "--encoder", "run_pre/contrastive.ckpt", "--out", "run_probe_a"]) == 0
    assert run(["probe", *common, "--encoder", "run_pre/contrastive.ckpt", "--out", "run_probe_b"]) == 0
    a = open("run_probe_a/metrics.csv", "rb").read()
    b = open("run_probe_b/metrics.csv", "rb").read()
    assert a == b  # rerunning the same resolved config reproduces metrics byte-for-byte

    assert run(["scratch", *common, "--out", "run_scratch"]) == 0
    assert os.path.exists("run_scratch/metrics.csv")

    assert run(
        [
            "cluster", "--checkpoint", "run_probe_a/probe.ckpt", "--corpus", "corpus",
            "--split", "split.json", "--k", "3", "--top-m", "2", "--out", "run_cluster",
        ]
    ) == 0
    rows = list(csv.reader(open("run_cluster/clusters.csv")))
    assert rows[0] == ["cluster", "label", "percent"]
    rows = list(csv.reader(open("run_cluster/embedding.csv")))
    assert rows[0] == ["x", "y", "label", "brain_id", "cluster"]


def test_config_file_and_flag_precedence(workdir):
    (workdir / "train.cfg").write_text("epochs=1\nbatch_size=9\nper_class_per_epoch=6\npatch_side=32\n")
    code = run(
        [
            "pretrain", "--config", "train.cfg", "--corpus", "corpus", "--split", "split.json",
            "--per-class-per-epoch", "9", "--out", "run_cfg",
        ]
    )
    assert code == 0
    resolved = (workdir / "run_cfg" / "config.txt").read_text()
    assert "per_class_per_epoch=9" in resolved  # flag wins over file
    assert "batch_size=9" in resolved

    assert run(["pretrain", "--config", "missing.cfg", "--corpus", "corpus", "--split", "split.json"]) in (1, 2)


def test_module_entrypoint_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "patchcontrast.cli", "gradcheck", "--trials", "1"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert "ok" in proc.stdout
