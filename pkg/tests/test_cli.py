import csv
import json
import subprocess
import sys

import pytest

from framecorr.cli import COMMANDS, main


def test_no_subcommand_is_usage_error(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().err


@pytest.mark.parametrize("cmd", sorted(COMMANDS))
def test_help_for_every_subcommand(cmd, capsys):
    assert main([cmd, "--help"]) == 0
    assert "--seed" in capsys.readouterr().out


def test_unknown_flag_is_usage_error():
    assert main(["prep", "--synthetic", "constant", "--bogus"]) == 2


def test_runtime_error_exits_one(tmp_path, capsys):
    assert main(["train-ae", "--data", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == 1
    assert "framecorr train-ae" in capsys.readouterr().err


def test_out_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("FRAMECORR_OUT", str(tmp_path / "env"))
    assert main(["prep", "--synthetic", "constant", "--dims", "8x8x1", "--counts", "1,1,1", "--frames", "2"]) == 0
    assert (tmp_path / "env" / "manifest.csv").is_file()
    assert (tmp_path / "env" / "prep.config.json").is_file()


def test_small_pipeline(tmp_path, capsys):
    data = tmp_path / "data"
    common = ["--seed", "3"]
    assert main(["prep", "--synthetic", "moving_square", "--dims", "16x16x1", "--counts", "3,1,2",
                 "--frames", "4", "--out", str(data)] + common) == 0
    config = json.loads((data / "prep.config.json").read_text())
    assert config["seed"] == 3 and config["command"] == "prep"

    manifest = str(data / "manifest.csv")
    assert main(["train-ae", "--data", manifest, "--epochs", "1", "--hidden", "16", "--out", str(tmp_path / "ae")]) == 0
    ae = str(tmp_path / "ae" / "autoencoder.fcnn")
    assert main(["train-pred", "--data", manifest, "--ae", ae, "--epochs", "1", "--out", str(tmp_path / "pred")]) == 0
    pred = str(tmp_path / "pred" / "predictor.fcnn")

    assert main(["build-ladder", "--data", manifest, "--out", str(tmp_path / "ladder")]) == 0
    ladder = json.loads((tmp_path / "ladder" / "ladder.json").read_text())
    assert len(ladder) == 2

    tx = tmp_path / "tx"
    assert main(["transmit", "--data", manifest, "--ae", ae, "--pred", pred, "--reconstructor", "framecorr",
                 "--preset", "medium", "--out", str(tx)]) == 0
    with open(tx / "results.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 1 + 2 * 4

    sw = tmp_path / "sw"
    assert main(["sweep", "--data", manifest, "--ae", ae, "--k", "0,3", "--out", str(sw)]) == 0
    assert main(["report", str(tx / "results.csv"), str(sw / "results.csv"), "--out", str(tmp_path / "rep")]) == 0
    with open(tmp_path / "rep" / "merged.csv", newline="") as fh:
        assert len(list(csv.reader(fh))) == 1 + 8 + 4
    capsys.readouterr()


def test_custom_channel_flags(tmp_path):
    data = tmp_path / "data"
    main(["prep", "--synthetic", "constant", "--dims", "8x8x1", "--counts", "1,1,1", "--frames", "2", "--out", str(data)])
    main(["train-ae", "--data", str(data / "manifest.csv"), "--epochs", "1", "--hidden", "8", "--out", str(tmp_path)])
    assert main(["transmit", "--data", str(data / "manifest.csv"), "--ae", str(tmp_path / "autoencoder.fcnn"),
                 "--rate", "2000000", "--burst", "16000", "--latency-ms", "5", "--no-baseline",
                 "--out", str(tmp_path / "tx")]) == 0
    summary = json.loads((tmp_path / "tx" / "summary.json").read_text())
    assert summary["config"]["channel"] == {"rate": 2000000, "burst": 16000, "latency_ms": 5.0}


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "framecorr"], capture_output=True, text=True)
    assert proc.returncode == 2
