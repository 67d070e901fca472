import json

import numpy as np
import pytest

from crgan.cli import run
from crgan.config import load_config
from crgan.data import load_png, save_png
from crgan.train import TrainingConfig, list_checkpoints, read_report

WORDS = ["CAT", "HOUSE"]


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return path


@pytest.fixture
def data(tmp_path):
    cfg = _write(tmp_path / "d.json", {"vocabulary": WORDS, "num_fonts": 3})
    assert run(["dataset-gen", "--config", str(cfg), "--out", str(tmp_path / "data")]) == 0
    return tmp_path / "data" / "manifest.json"


def test_missing_config_is_usage_error(tmp_path, capsys):
    assert run(["train", "--out", str(tmp_path)]) == 2
    assert "usage:" in capsys.readouterr().err


def test_unknown_subcommand(capsys):
    assert run(["fly"]) == 2


def test_empty_config_gives_defaults(tmp_path):
    cfg = load_config(TrainingConfig, _write(tmp_path / "c.json", {}))
    assert (cfg.learning_rate, cfg.batch_size, cfg.epochs) == (0.001, 32, 60)


def test_override_wins(tmp_path):
    cfg = load_config(TrainingConfig, _write(tmp_path / "c.json", {"epochs": 9, "pretrain_epochs": 0}), ["epochs=1"])
    assert cfg.epochs == 1


@pytest.mark.parametrize("override,key", [("batch_size=0", "batch_size"), ("colour=red", "colour"),
                                          ("epochs", "epochs")])
def test_bad_override_exits_2_naming_key(data, tmp_path, capsys, override, key):
    cfg = _write(tmp_path / "t.json", {})
    code = run(["train", "--config", str(cfg), "--data", str(data), "--out", str(tmp_path / "r"), "-o", override])
    assert code == 2
    assert key in capsys.readouterr().err


def test_missing_file_is_runtime_error_naming_flag(tmp_path, capsys):
    code = run(["translate", "--checkpoint", str(tmp_path / "none.ckpt"), "--input", "x.png", "--target-font", "1",
                "--out", str(tmp_path / "o.png")])
    assert code == 1
    assert "--checkpoint" in capsys.readouterr().err


def test_dataset_gen_seed_flag_and_resolved_config(tmp_path):
    cfg = _write(tmp_path / "d.json", {"num_words": 3, "num_fonts": 2})
    for name in ("a", "b"):
        assert run(["dataset-gen", "--config", str(cfg), "--out", str(tmp_path / name), "--seed", "5"]) == 0
    resolved = json.loads((tmp_path / "a" / "resolved-config.json").read_text())
    assert resolved["seed"] == 5
    assert (tmp_path / "a/manifest.json").read_bytes() == (tmp_path / "b/manifest.json").read_bytes()


def test_resolved_config_reproduces_training(data, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = _write(tmp_path / "t.json", {"batch_size": 4, "epochs": 5, "pretrain_epochs": 1,
                                       "checkpoint_interval": 100, "max_steps": 1})
    assert run(["train", "--config", str(cfg), "--data", str(data), "--out", "r1", "--seed", "4"]) == 0
    assert run(["train", "--config", "r1/resolved-config.json", "--out", "r2"]) == 0
    assert (tmp_path / "r1/steps.csv").read_bytes() == (tmp_path / "r2/steps.csv").read_bytes()
    assert json.loads((tmp_path / "r1/resolved-config.json").read_text())["seed"] == 4


def test_full_pipeline(data, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    before = set(tmp_path.iterdir())
    cfg = _write(tmp_path / "t.json", {"batch_size": 4, "epochs": 1000, "pretrain_epochs": 1,
                                       "checkpoint_interval": 1000, "max_steps": 50})
    for kind in ("recurrent", "baseline"):
        assert run(["train", "--config", str(cfg), "--data", str(data), "--out", f"runs/{kind}",
                    "-o", f"model_kind={kind}"]) == 0
        rows = read_report(tmp_path / "runs" / kind / "steps.csv")
        assert sum(r["d_real"] > 0 for r in rows) == 50
        assert (tmp_path / "runs" / kind / "train-report.json").exists()
    rec = list_checkpoints(tmp_path / "runs/recurrent")[-1]
    base = list_checkpoints(tmp_path / "runs/baseline")[-1]

    save_png(np.random.default_rng(0).uniform(-1, 1, (32, 70)), tmp_path / "in.png")
    assert run(["translate", "--checkpoint", str(rec), "--input", "in.png", "--target-font", "2",
                "--out", "out/t.png"]) == 0
    out = load_png(tmp_path / "out/t.png")
    assert (out.height, out.width) == (32, 70)

    assert run(["eval", "--recurrent", str(rec), "--baseline", str(base), "--data", str(data), "--out", "report"]) == 0
    for name in ("report.json", "paired.csv", "grid/CAT.png", "grid/HOUSE.png"):
        assert (tmp_path / "report" / name).exists(), name
    created = set(tmp_path.iterdir()) - before
    assert {p.name for p in created} == {"t.json", "runs", "in.png", "out", "report"}


def test_translate_rejects_unknown_font(data, tmp_path, capsys):
    cfg = _write(tmp_path / "t.json", {"epochs": 0, "pretrain_epochs": 0})
    assert run(["train", "--config", str(cfg), "--data", str(data), "--out", str(tmp_path / "r")]) == 0
    ckpt = list_checkpoints(tmp_path / "r")[0]
    save_png(np.zeros((32, 40)), tmp_path / "in.png")
    code = run(["translate", "--checkpoint", str(ckpt), "--input", str(tmp_path / "in.png"), "--target-font", "7",
                "--out", str(tmp_path / "o.png")])
    assert code == 2 and "--target-font" in capsys.readouterr().err
