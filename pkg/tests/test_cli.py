import csv

import pytest

from bcnn_ctn.backbone import BackboneConfig, ConvBlock
from bcnn_ctn.cli import main
from bcnn_ctn.config import dump_config
from bcnn_ctn.evaluation import read_pairs_csv, read_report_csv
from bcnn_ctn.mining import SamplerConfig
from bcnn_ctn.trainer import TrainConfig


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = TrainConfig(epochs=2, phase1_epochs=1, learning_rate=0.01, momentum=0.9, augment=None,
                      sampler=SamplerConfig(2, 3),
                      backbone=BackboneConfig(input_size=(3, 12, 12), conv_blocks=(ConvBlock(4), ConvBlock(4)),
                                              embedding_dim=8))
    (root / "tiny.cfg").write_text(dump_config(cfg))
    assert main(["synth", "--classes", "3", "--per-class", "15", "--size", "12x12", "--out",
                 str(root / "data")]) == 0
    assert main(["train", "--data", str(root / "data"), "--config", str(root / "tiny.cfg"),
                 "--out", str(root / "run")]) == 0
    return root


def test_train_outputs(workspace):
    run = workspace / "run"
    assert (run / "epoch_001.ckpt").exists() and (run / "last.ckpt").exists()
    with open(run / "history.csv") as f:
        assert len(list(csv.DictReader(f))) == 2


def test_resume_continues(workspace, tmp_path):
    assert main(["train", "--data", str(workspace / "data"), "--config", str(workspace / "tiny.cfg"),
                 "--out", str(tmp_path), "--epochs", "3", "--resume", str(workspace / "run" / "last.ckpt")]) == 0
    assert (tmp_path / "epoch_003.ckpt").exists() and not (tmp_path / "epoch_002.ckpt").exists()


def test_eval_writes_report(workspace, tmp_path):
    assert main(["eval", "--data", str(workspace / "data"), "--checkpoint", str(workspace / "run" / "last.ckpt"),
                 "--out", str(tmp_path), "--pair-count", "40", "--folds", "4"]) == 0
    rows = read_report_csv(tmp_path / "report.csv")
    assert len(rows) == 4 and rows[-1].name == "Average"
    assert (tmp_path / "roc.svg").exists() and (tmp_path / "confusion.csv").exists()


def test_pairs_subcommand(workspace, tmp_path, capsys):
    assert main(["pairs", "--data", str(workspace / "data"), "--checkpoint", str(workspace / "run" / "last.ckpt"),
                 "--out", str(tmp_path), "--folds", "10", "--count", "600", "--same-fraction", "0.6",
                 "--split", "train", "--log-level", "WARNING"]) == 0
    pairs = read_pairs_csv(tmp_path / "pairs.csv")
    assert len(pairs) == 600 and sum(p["same_class"] for p in pairs) == 360
    assert "mean accuracy" in capsys.readouterr().out


def test_sweep_alpha(workspace, tmp_path):
    assert main(["sweep-alpha", "--data", str(workspace / "data"), "--config", str(workspace / "tiny.cfg"),
                 "--out", str(tmp_path), "--alphas", "0,1", "--epochs", "1"]) == 0
    assert (tmp_path / "alpha_sweep.csv").exists() and (tmp_path / "alpha_sweep.svg").exists()


def test_ingest_balances(workspace, tmp_path):
    assert main(["ingest", "--data", str(workspace / "data"), "--out", str(tmp_path / "d"), "--size", "8x8",
                 "--balance", "10"]) == 0
    with open(tmp_path / "d" / "manifest.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 30 and {r["split"] for r in rows} == {"train", "validation", "test"}


def test_gradcheck_subcommand(capsys):
    assert main(["gradcheck", "--trials", "1", "--no-network"]) == 0
    assert "passed" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [[], ["synth", "--classes", "3"], ["pairs", "--folds", "1", "--data", "x",
                                                                     "--checkpoint", "y", "--out", "z"],
                                  ["synth", "--classes", "1", "--per-class", "3", "--out", "/tmp/unused"]])
def test_usage_errors_exit_1(argv):
    try:
        code = main(argv)
    except SystemExit as e:
        code = e.code
    assert code == 1


def test_missing_config_key_exit_1(workspace, tmp_path, capsys):
    text = "".join(l for l in (workspace / "tiny.cfg").read_text().splitlines(True) if not l.startswith("mu1"))
    (tmp_path / "bad.cfg").write_text(text)
    assert main(["train", "--data", str(workspace / "data"), "--config", str(tmp_path / "bad.cfg"),
                 "--out", str(tmp_path)]) == 1
    assert "missing config key: mu1" in capsys.readouterr().err


def test_runtime_errors_exit_2(workspace, tmp_path):
    (tmp_path / "junk.ckpt").write_bytes(b"junk")
    assert main(["eval", "--data", str(workspace / "data"), "--checkpoint", str(tmp_path / "junk.ckpt"),
                 "--out", str(tmp_path)]) == 2
    assert main(["eval", "--data", str(tmp_path / "none"), "--checkpoint", str(workspace / "run" / "last.ckpt"),
                 "--out", str(tmp_path)]) == 2
