import json

import numpy as np
import pytest
from sklearn.metrics import silhouette_score

from snd.datasets import default_palette
from snd.evaluator import (
    PAIRINGS,
    ClassResult,
    EvalReport,
    derive_seed,
    export_latents,
    mean_gap,
    plot_latents,
    project_2d,
    read_latents,
    run_protocol,
)
from snd.nets import ArchConfig, SNDNet
from snd.train import TrainConfig

FAST = TrainConfig(epochs=1, batch_size=32, latent_dim=4)
SPLIT = {"n_train": 40, "n_test": 20, "novel_fraction": 0.25}


def test_report_bookkeeping():
    rep = EvalReport({0: ClassResult(0, auroc=0.7, auprc=0.3), 1: ClassResult(1, auroc=0.8, auprc=0.5)})
    assert rep.average_auroc == np.mean([0.7, 0.8])
    assert rep.average_auprc == np.mean([0.3, 0.5])
    assert rep.completeness == 1.0
    assert rep.average_baseline_auroc is None


def test_failed_classes_excluded_from_average():
    rep = EvalReport({0: ClassResult(0, auroc=0.6), 1: ClassResult(1, status="failed", error="boom")})
    assert rep.average_auroc == 0.6
    assert rep.completeness == 0.5
    assert "-" in rep.render_table()


def test_report_json_roundtrip(tmp_path):
    rep = EvalReport({3: ClassResult(3, auroc=0.75, auprc=0.4, baseline_auroc=0.5, baseline_auprc=0.2, seed=9)},
                     config={"a": 1}, seeds={3: 9})
    rep.write_json(tmp_path / "r.json")
    back = EvalReport.from_dict(json.loads((tmp_path / "r.json").read_text()))
    assert back.to_dict() == rep.to_dict()
    table = rep.render_table()
    assert "SND" in table and "Raw KDE" in table and "75.00" in table and "Average" in table


def test_derive_seed_stable_and_distinct():
    assert derive_seed(0, 1) == derive_seed(0, 1)
    assert len({derive_seed(0, c) for c in range(10)}) == 10
    assert derive_seed(0, 1) != derive_seed(1, 1)


def test_protocol_two_classes(toy_digits):
    digits, labels = toy_digits
    rep = run_protocol(digits, labels, default_palette(), FAST, classes=[0, 1], all_classes=range(4), split_kw=SPLIT,
                       baseline=True)
    assert sorted(rep.per_class) == [0, 1]
    assert all(r.status == "ok" for r in rep.per_class.values())
    assert rep.average_auroc == np.mean([rep.per_class[c].auroc for c in (0, 1)])
    assert all(r.baseline_auroc is not None for r in rep.per_class.values())
    again = run_protocol(digits, labels, default_palette(), FAST, classes=[0, 1], all_classes=range(4),
                         split_kw=SPLIT, baseline=True)
    assert again.to_dict() == rep.to_dict()


def test_protocol_continues_after_failure(toy_digits):
    digits, labels = toy_digits
    rep = run_protocol(digits, labels, default_palette(), FAST, classes=[0, 1], all_classes=range(4),
                       split_kw={**SPLIT, "n_train": 10_000})
    assert rep.completeness == 0.0
    assert all("CapacityError" in r.error for r in rep.per_class.values())


def test_export_latents_shape(tmp_path):
    model = SNDNet(ArchConfig(latent_dim=4))
    x = np.random.default_rng(0).random((7, 3, 28, 28), dtype=np.float32)
    table = export_latents(tmp_path / "z.csv", x, model, labels=np.arange(7), background_ids=np.zeros(7, int))
    assert table.shape == (7, 3 * 4 + 3)
    back = read_latents(tmp_path / "z.csv")
    assert back["z_s"].shape == (7, 4)
    np.testing.assert_array_equal(back["class_label"], np.arange(7))
    np.testing.assert_array_equal(back["z_b"], table[:, 3 + 8 :])


def test_pca_identical_vectors_identical_points():
    x = np.random.default_rng(0).normal(size=(10, 5))
    x[3] = x[7]
    p = project_2d(x, "pca")
    assert np.array_equal(p[3], p[7])
    assert np.array_equal(p, project_2d(x, "pca"))


def test_pca_separates_background_clusters():
    rng = np.random.default_rng(0)
    centers = rng.normal(size=(2, 16)) * 3
    bg = np.repeat([0, 1], 50)
    z_b = centers[bg] + 0.5 * rng.normal(size=(100, 16))
    assert silhouette_score(project_2d(z_b, "pca"), bg) > 0


def test_tsne_runs():
    x = np.random.default_rng(0).normal(size=(30, 4))
    assert project_2d(x, "tsne").shape == (30, 2)
    with pytest.raises(ValueError):
        project_2d(x, "umap")


def test_plot_latents_writes_png(tmp_path):
    rng = np.random.default_rng(0)
    lat = {k: rng.normal(size=(20, 4)) for k in ("z_f", "z_s", "z_b")}
    plot_latents(lat, tmp_path / "p.png")
    assert (tmp_path / "p.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert len(PAIRINGS) == 3


def test_mean_gap():
    s = np.array([1.0, 2.0, 3.0, 4.0])
    a, b = np.array([False, False, True, True]), np.array([True, True, False, False])
    assert mean_gap(s, a, b) == pytest.approx(2.0 / np.sqrt(0.5), abs=1e-12)
    assert mean_gap(np.ones(4), a, b) == 0.0


def test_protocol_multi_seed(toy_digits):
    digits, labels = toy_digits
    rep = run_protocol(digits, labels, default_palette(), FAST, classes=[2], all_classes=range(4), split_kw=SPLIT,
                       n_seeds=2)
    r = rep.per_class[2]
    assert len(r.replicates) == 2 and r.replicates[0]["seed"] == derive_seed(0, 2)
    assert r.replicates[0]["seed"] != r.replicates[1]["seed"]
    assert r.auroc == pytest.approx(np.mean([x["auroc"] for x in r.replicates]))
    with pytest.raises(ValueError):
        run_protocol(digits, labels, default_palette(), FAST, classes=[2], n_seeds=0)
