import csv
import json
import os
import xml.etree.ElementTree as ET

import pytest
import tomlkit

from vib2ecg import cli, datastore as ds

FAST = """
[model]
channel_ladder = [4, 8, 16]

[train]
max_epochs = 1
batch_size = 4

[eval]
sample_size = 20
"""


def run(*argv):
    return cli.main([str(a) for a in argv])


def error_of(capsys):
    lines = [ln for ln in capsys.readouterr().err.splitlines() if ln.startswith("{")]
    assert len(lines) == 1
    return json.loads(lines[0])


def tree_bytes(root):
    out = {}
    for d, _, files in os.walk(root):
        for f in files:
            p = os.path.join(d, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, root)] = fh.read()
    return out


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "fast.toml"
    cfg.write_text(FAST)
    assert run("synth", "--config", cfg, "--out", root / "raw", "--days", 2, "--duration", 60, "--seed", 3) == 0
    assert run("preprocess", "--config", cfg, "--src", root / "raw", "--out", root / "prep", "--positions", "V4,V5", "--train-stride", 3000) == 0
    return root, cfg


def test_synth_eight_days(tmp_path):
    assert run("synth", "--out", tmp_path, "--days", 8, "--duration", 30) == 0
    days = sorted(os.listdir(tmp_path / "S00"))
    assert days == [f"day{d}" for d in range(8)]
    for d in days:
        assert ds.read_recording(tmp_path / "S00" / d).day_index == int(d[3:])
    assert (tmp_path / "config.toml").exists()


def test_synth_is_bit_identical(tmp_path):
    for name in ("a", "b"):
        assert run("synth", "--out", tmp_path / name, "--duration", 30, "--subjects", 2, "--seed", 9) == 0
    a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
    assert a.keys() == b.keys() and a == b
    assert run("synth", "--out", tmp_path / "c", "--duration", 30, "--subjects", 2, "--seed", 10) == 0
    assert tree_bytes(tmp_path / "c")["S00/day0/V1_ecg.bin"] != a["S00/day0/V1_ecg.bin"]


@pytest.mark.parametrize("duration", [0, 10])
def test_synth_bad_duration(tmp_path, capsys, duration):
    assert run("synth", "--out", tmp_path, "--duration", duration) == 2
    assert error_of(capsys)["error"] == "usage"


def test_seed_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv("VIB2ECG_SEED", "5")
    assert run("synth", "--out", tmp_path / "env", "--duration", 30) == 0
    assert tomlkit.parse((tmp_path / "env" / "config.toml").read_text())["seed"] == 5
    assert run("synth", "--out", tmp_path / "flag", "--duration", 30, "--seed", 6) == 0
    assert tomlkit.parse((tmp_path / "flag" / "config.toml").read_text())["seed"] == 6
    cfg = tmp_path / "s.toml"
    cfg.write_text("seed = 7\n")
    assert run("synth", "--config", cfg, "--out", tmp_path / "file", "--duration", 30) == 0
    assert tomlkit.parse((tmp_path / "file" / "config.toml").read_text())["seed"] == 7


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[train]\nlearning_rate = 1\n")
    assert run("synth", "--config", bad, "--out", tmp_path / "x") == 2
    assert error_of(capsys)["error"] == "config"
    bad.write_text("[train\n")
    assert run("synth", "--config", bad, "--out", tmp_path / "x") == 2
    assert error_of(capsys)["error"] == "config"
    assert run("synth", "--config", tmp_path / "missing.toml", "--out", tmp_path / "x") == 2


def test_usage_errors(tmp_path, capsys):
    assert run("frobnicate") == 2
    assert error_of(capsys)["error"] == "usage"
    assert run("train", "--data", tmp_path / "none", "--out", tmp_path / "o") == 2
    assert "dataset" in error_of(capsys)["message"]
    assert run("preprocess", "--src", tmp_path, "--out", tmp_path / "o") == 2
    assert error_of(capsys)["error"] == "usage"


def test_help_documents_csv_columns(capsys):
    with pytest.raises(SystemExit):
        run("--help")
    out = capsys.readouterr().out
    for col in ("subject_id", "hallucination_pct", "reference_beats", "train_l1"):
        assert col in out


def test_preprocess_layout(workspace):
    root, _ = workspace
    base = root / "prep" / "S00" / "day0"
    assert sorted(os.listdir(base)) == ["V4", "V5"]
    v4 = base / "V4"
    assert len(ds.load_segments(v4 / "all")) == 20
    split = ds.load_split(v4)
    assert (len(split.train), len(split.validation), len(split.test)) == (14, 2, 4)
    assert (v4 / "annotations.json").exists()
    assert (root / "prep" / "config.toml").exists()


def test_preprocess_is_idempotent(workspace, tmp_path):
    root, cfg = workspace
    before = tree_bytes(root / "prep")
    assert run("preprocess", "--config", cfg, "--src", root / "raw", "--out", root / "prep", "--positions", "V4,V5", "--train-stride", 3000) == 0
    assert tree_bytes(root / "prep") == before


def test_corrupt_file_reports_path(workspace, tmp_path, capsys):
    root, _ = workspace
    src = tmp_path / "rec"
    assert run("ingest", "--src", root / "raw" / "S00" / "day0", "--out", src) == 0
    target = next(src.rglob("V2_vib.bin"))
    target.write_bytes(b"XXXX" + target.read_bytes()[4:])
    assert run("preprocess", "--src", src, "--out", tmp_path / "p") == 1
    err = error_of(capsys)
    assert err["error"] == "format" and "V2_vib.bin" in err["message"]


def test_ingest_round_trips(workspace, tmp_path):
    root, _ = workspace
    assert run("ingest", "--src", root / "raw", "--out", tmp_path / "store") == 0
    a = ds.read_recording(root / "raw" / "S00" / "day1")
    b = ds.read_recording(tmp_path / "store" / "S00" / "day1")
    assert a.equals(b)


@pytest.fixture(scope="module")
def trained(workspace):
    root, cfg = workspace
    out = root / "train_both"
    assert run("train", "--config", cfg, "--data", root / "prep" / "S00" / "day0" / "V4", "--out", out, "--mode", "BOTH") == 0
    return out


def test_train_outputs(trained):
    info = json.loads((trained / "train.json").read_text())
    assert info["input_mode"] == "BOTH" and info["seed"] == 0 and info["best_epoch"] == 0
    with open(trained / "history.csv") as fh:
        assert next(csv.reader(fh)) == ["epoch", "train_l1", "val_l1"]
    assert (trained / "model.v2ew").exists() and (trained / "config.toml").exists()


def test_resume(workspace, trained, tmp_path, capsys):
    root, cfg = workspace
    data = root / "prep" / "S00" / "day0" / "V4"
    assert run("train", "--config", cfg, "--data", data, "--out", tmp_path / "r", "--mode", "BOTH", "--resume", trained) == 0
    assert run("train", "--config", cfg, "--data", data, "--out", tmp_path / "r2", "--mode", "BOTH", "--resume", trained, "--lr", 0.5) == 2
    assert "refusing to resume" in error_of(capsys)["message"]


def test_pooled_training(workspace, tmp_path):
    root, cfg = workspace
    assert run("train", "--config", cfg, "--data", root / "prep" / "S00" / "day0", "--out", tmp_path / "p", "--mode", "SCG", "--pooled") == 0
    assert json.loads((tmp_path / "p" / "train.json").read_text())["pooled"] is True


def test_eval(workspace, trained, tmp_path, capsys):
    root, cfg = workspace
    data = root / "prep" / "S00" / "day0" / "V4"
    assert run("eval", "--config", cfg, "--data", data, "--out", tmp_path / "e") == 2
    assert error_of(capsys)["error"] == "usage"
    assert run("eval", "--config", cfg, "--checkpoint", trained, "--data", data, "--out", tmp_path / "e") == 0
    rows = list(csv.DictReader(open(tmp_path / "e" / "report.csv")))
    assert len(rows) == 1 and rows[0]["input_mode"] == "BOTH" and rows[0]["n_windows"] == "4"
    for svg in ("l1.svg", "hallucination.svg"):
        assert ET.parse(tmp_path / "e" / svg).getroot().tag.endswith("svg")
    assert (tmp_path / "e" / "config.toml").exists()


def test_ablate_four_rows(workspace, tmp_path):
    root, cfg = workspace
    assert run("ablate", "--config", cfg, "--data", root / "prep" / "S00" / "day0" / "V5", "--out", tmp_path / "a") == 0
    rows = list(csv.DictReader(open(tmp_path / "a" / "report.csv")))
    assert [r["input_mode"] for r in rows] == ["SCG", "PCGL", "RAW", "BOTH"]
    assert all(r["position"] == "V5" and r["seed"] == "0" for r in rows)
    for m in ("SCG", "PCGL", "RAW", "BOTH"):
        assert (tmp_path / "a" / m / "model.v2ew").exists()
    ET.parse(tmp_path / "a" / "hallucination.svg")
    assert run("report", "--out", tmp_path / "rep", tmp_path / "a" / "report.csv") == 0
    ET.parse(tmp_path / "rep" / "l1.svg")


def test_tempgen(workspace, tmp_path):
    root, cfg = workspace
    assert run("tempgen", "--config", cfg, "--data", root / "prep" / "S00", "--position", "V4", "--mode", "SCG", "--out", tmp_path / "t") == 0
    rows = list(csv.DictReader(open(tmp_path / "t" / "report.csv")))
    assert [r["day"] for r in rows] == ["0", "1"]
    assert rows[1]["n_windows"] == "20"
    ET.parse(tmp_path / "t" / "l1.svg")
    assert run("tempgen", "--config", cfg, "--data", root / "prep" / "S00", "--position", "V1", "--out", tmp_path / "t2") == 2
