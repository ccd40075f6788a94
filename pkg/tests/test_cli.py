import csv
import json

import pytest

from snd.cli import main

TOY_CFG = 'classes = [0, 1, 2, 3]\nn_train = 60\nn_test = 20\nnovel_fraction = 0.25\nnovel_class = 3\n'


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "toy.toml"
    p.write_text(TOY_CFG)
    return p


@pytest.fixture
def toy_data(tmp_path, toy_idx_dir, cfg_file):
    out = tmp_path / "data"
    assert main(["gen-data", "--config", str(cfg_file), "--mnist-dir", str(toy_idx_dir), "--out", str(out)]) == 0
    return out


def test_gen_data_defaults(toy_data):
    m = json.loads((toy_data / "manifest.json").read_text())
    assert len(m["palette"]["train_colors"]) == 3
    assert len(m["palette"]["test_unseen_colors"]) == 1
    assert m["counts"] == {"train": 60, "test": 20, "test_normal": 15, "test_novel": 5}
    assert m["spec"]["novel_class"] == 3


def test_gen_data_seed_determinism(tmp_path, toy_idx_dir, cfg_file):
    sums = []
    for name in ("a", "b"):
        args = ["gen-data", "--config", str(cfg_file), "--mnist-dir", str(toy_idx_dir), "--seed", "7",
                "--out", str(tmp_path / name)]
        assert main(args) == 0
        sums.append(json.loads((tmp_path / name / "manifest.json").read_text())["checksum"])
    assert sums[0] == sums[1]


def test_gen_data_bad_colour(tmp_path, toy_idx_dir, cfg_file, capsys):
    code = main(["gen-data", "--config", str(cfg_file), "--mnist-dir", str(toy_idx_dir),
                 "--train-colors", "1.5,0,0;1,1,1", "--out", str(tmp_path / "x")])
    assert code == 2
    assert "train_colors" in capsys.readouterr().err


def test_gen_data_unknown_config_key(tmp_path, toy_idx_dir):
    bad = tmp_path / "bad.toml"
    bad.write_text("omgea1 = 2.0\n")
    assert main(["gen-data", "--config", str(bad), "--mnist-dir", str(toy_idx_dir), "--out", str(tmp_path / "x")]) == 2


def test_gen_data_missing_source_names_paths(tmp_path, capsys):
    assert main(["gen-data", "--mnist-dir", str(tmp_path / "nowhere"), "--out", str(tmp_path / "x")]) == 2
    assert "train-images-idx3-ubyte" in capsys.readouterr().err


def _steps(path):
    return [json.loads(l) for l in path.read_text().splitlines() if json.loads(l)["type"] == "step"]


def test_train_one_epoch(tmp_path, toy_data, capsys):
    out = tmp_path / "run"
    assert main(["train", "--data", str(toy_data), "--out", str(out), "--epochs", "1", "--batch-size", "32",
                 "--latent-dim", "4"]) == 0
    assert (out / "model.pt").is_file()
    assert len(_steps(out / "train_log.jsonl")) == 2  # 60 samples, batches of 32 and 28
    assert "epoch    1" in capsys.readouterr().out


def test_train_zero_weights(tmp_path, toy_data):
    out = tmp_path / "run"
    assert main(["train", "--data", str(toy_data), "--out", str(out), "--epochs", "1", "--batch-size", "16",
                 "--omega1", "0", "--omega2", "0", "--latent-dim", "4"]) == 0
    steps = _steps(out / "train_log.jsonl")
    assert steps and all(s["total"] == s["rec"] for s in steps)


def test_train_missing_data(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "run")]) == 2
    assert "gen-data" in capsys.readouterr().err


def test_score_export_plot(tmp_path, toy_data):
    run = tmp_path / "run"
    assert main(["train", "--data", str(toy_data), "--out", str(run), "--epochs", "1", "--latent-dim", "4"]) == 0
    assert main(["score", "--data", str(toy_data), "--checkpoint", str(run / "model.pt"),
                 "--out", str(tmp_path / "s.csv")]) == 0
    rows = list(csv.DictReader((tmp_path / "s.csv").open()))
    assert len(rows) == 20
    assert list(rows[0]) == ["sample_id", "class_label", "background_id", "is_novel", "score", "log_space"]
    assert main(["export-latents", "--data", str(toy_data), "--checkpoint", str(run / "model.pt"),
                 "--out", str(tmp_path / "z.csv")]) == 0
    assert main(["plot", "--latents", str(tmp_path / "z.csv"), "--out", str(tmp_path / "z.png")]) == 0
    assert (tmp_path / "z.png").stat().st_size > 0


def test_eval_single_split(tmp_path, toy_data):
    out = tmp_path / "ev"
    assert main(["eval", "--data", str(toy_data), "--out", str(out), "--epochs", "1", "--latent-dim", "4",
                 "--baseline"]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert list(rep["per_class"]) == ["3"]
    row = rep["per_class"]["3"]
    assert row["auroc"] is not None and row["baseline_auroc"] is not None
    assert "Raw KDE" in (out / "report.txt").read_text()
    assert (out / "scores.csv").is_file()


def test_eval_protocol_two_classes(tmp_path, toy_idx_dir, cfg_file):
    out = tmp_path / "ev"
    assert main(["eval", "--config", str(cfg_file), "--mnist-dir", str(toy_idx_dir), "--classes", "0,1",
                 "--epochs", "1", "--latent-dim", "4", "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert sorted(rep["per_class"]) == ["0", "1"]
    assert rep["average_auroc"] == pytest.approx((rep["per_class"]["0"]["auroc"] + rep["per_class"]["1"]["auroc"]) / 2)
    assert rep["per_class"]["0"]["baseline_auroc"] is None


def test_eval_without_inputs(tmp_path):
    assert main(["eval", "--out", str(tmp_path / "ev")]) == 2


def test_train_artifacts_embed_resolved_config(tmp_path, toy_data, cfg_file):
    import torch

    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg_file), "--data", str(toy_data), "--out", str(out), "--epochs", "1",
                 "--latent-dim", "4"]) == 0
    cfg_hash = json.loads((out / "config.json").read_text())["hash"]
    header = json.loads((out / "train_log.jsonl").read_text().splitlines()[0])
    assert header["meta"]["resolved_config"]["hash"] == cfg_hash
    assert header["meta"]["resolved_config"]["provenance"]["latent_dim"] == "flag"
    meta = torch.load(out / "model.pt", weights_only=False)["metadata"]
    assert meta["resolved_config"]["hash"] == cfg_hash
