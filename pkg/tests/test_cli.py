import json

import numpy as np
import pytest

from driftmark.cli import build_parser, main
from driftmark.harness import CSV_COLUMNS, ExperimentConfig


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(ExperimentConfig(n_seeds=100, samplers=["ddim"], attacks=[]).to_json())
    return str(path)


def test_subcommands_present():
    sub = next(a for a in build_parser()._actions if a.dest == "command")
    assert set(sub.choices) == {"embed", "extract", "attack", "suite", "sweep", "diagnostics", "calibrate"}


def test_embed_extract_attack(tmp_path, cfg_path, capsys):
    img = tmp_path / "x.npy"
    assert main(["embed", "--config", cfg_path, "--n", "4", "--out", str(img)]) == 0
    assert np.load(img).shape == (4, 256)
    assert main(["extract", str(img), "--config", cfg_path]) == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if "bit_acc" in l]
    assert len(lines) == 4
    out = tmp_path / "y.npy"
    assert main(["attack", str(img), "--attack", "regen", "--rinse", "2", "--out", str(out)]) == 0
    assert main(["attack", str(img), "--attack", "noise", "--param", "0.1", "--out", str(out)]) == 0
    assert np.load(out).shape == (4, 256)


def test_embed_custom_window(tmp_path, cfg_path):
    img = tmp_path / "x.npy"
    assert main(["embed", "--config", cfg_path, "--window", "5:30", "--lambda", "0.5", "--out", str(img)]) == 0


def test_suite_csv_and_json(tmp_path, cfg_path):
    out, js = tmp_path / "s.csv", tmp_path / "s.json"
    assert main(["suite", "--config", cfg_path, "--out", str(out), "--json", str(js), "--preset", "R"]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS) and len(lines) == 2
    assert json.loads(js.read_text())[0]["preset"] == "R"


def test_sweep_diagnostics_calibrate(tmp_path, cfg_path, capsys):
    out = tmp_path / "sw.csv"
    assert main(["sweep", "--config", cfg_path, "--grid", "1:50@1,20:45@0.5", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 3
    out = tmp_path / "d.csv"
    assert main(["diagnostics", "--config", cfg_path, "--n", "3", "--out", str(out)]) == 0
    assert out.read_text().startswith("t,gamma,eps_norm_Q,eps_norm_R")
    scores = tmp_path / "c.txt"
    np.savetxt(scores, np.arange(200.0))
    capsys.readouterr()
    assert main(["calibrate", str(scores), "--fpr", "0.01"]) == 0
    assert float(capsys.readouterr().out) == 198.0


def test_failures_exit_nonzero(tmp_path, cfg_path, capsys):
    assert main(["embed", "--config", cfg_path, "--window", "10:80", "--out", str(tmp_path / "x.npy")]) != 0
    assert "window end 80" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"n_seeds": 50, "samplers": ["ddim"], "attacks": [{"kind": "average"}]}))
    assert main(["suite", "--config", str(bad), "--out", str(tmp_path / "s.csv")]) != 0
    err = capsys.readouterr().err
    assert "cell 0" in err and "sampler=ddim" in err
    with pytest.raises(SystemExit):
        main(["embed", "--window", "oops"])
