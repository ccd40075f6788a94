"""Leave-one-class-out protocol, reports and latent exports."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .datasets import ImageSet, Palette, SplitSpec, build_split
from .metrics import auprc, auroc
from .nets import SNDNet, encode_array
from .score import NoveltyScores, fit_kde, raw_kde_baseline, score_dataset, subject_features
from .train import TrainConfig, train

logger = logging.getLogger(__name__)


@dataclass
class ClassResult:
    novel_class: int
    status: str = "ok"
    auroc: float | None = None
    auprc: float | None = None
    n_normal: int = 0
    n_novel: int = 0
    baseline_auroc: float | None = None
    baseline_auprc: float | None = None
    seed: int = 0
    error: str | None = None
    replicates: list = field(default_factory=list)  # per-seed metrics when a cell averages several seeds


@dataclass
class EvalReport:
    per_class: dict[int, ClassResult]
    config: dict = field(default_factory=dict)
    seeds: dict[int, int] = field(default_factory=dict)

    def _ok(self):
        return [r for r in self.per_class.values() if r.status == "ok"]

    def _mean(self, key):
        vals = [getattr(r, key) for r in self._ok() if getattr(r, key) is not None]
        return float(np.mean(vals)) if vals else None

    @property
    def average_auroc(self):
        return self._mean("auroc")

    @property
    def average_auprc(self):
        return self._mean("auprc")

    @property
    def average_baseline_auroc(self):
        return self._mean("baseline_auroc")

    @property
    def average_baseline_auprc(self):
        return self._mean("baseline_auprc")

    @property
    def completeness(self) -> float:
        return len(self._ok()) / len(self.per_class) if self.per_class else 0.0

    def to_dict(self) -> dict:
        return {
            "per_class": {str(k): asdict(v) for k, v in sorted(self.per_class.items())},
            "average_auroc": self.average_auroc,
            "average_auprc": self.average_auprc,
            "average_baseline_auroc": self.average_baseline_auroc,
            "average_baseline_auprc": self.average_baseline_auprc,
            "completeness": self.completeness,
            "config": self.config,
            "seeds": {str(k): v for k, v in sorted(self.seeds.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            per_class={int(k): ClassResult(**v) for k, v in d["per_class"].items()},
            config=d.get("config", {}),
            seeds={int(k): v for k, v in d.get("seeds", {}).items()},
        )

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def render_table(self, metric: str = "auroc") -> str:
        """Text table, one column per held-out class plus the average, values in percent."""
        classes = sorted(self.per_class)
        header = ["Method"] + [str(c) for c in classes] + ["Average"]
        rows = [("SND", metric)]
        if any(getattr(r, f"baseline_{metric}") is not None for r in self.per_class.values()):
            rows.append(("Raw KDE", f"baseline_{metric}"))

        def fmt(v):
            return "-" if v is None else f"{100 * v:.2f}"

        lines = []
        for name, key in rows:
            vals = [fmt(getattr(self.per_class[c], key)) for c in classes]
            lines.append([name] + vals + [fmt(self._mean(key))])
        widths = [max(len(r[i]) for r in [header] + lines) for i in range(len(header))]
        out = [" | ".join(h.ljust(w) for h, w in zip(header, widths))]
        out.append("-+-".join("-" * w for w in widths))
        out += [" | ".join(v.ljust(w) for v, w in zip(r, widths)) for r in lines]
        return f"{metric.upper()} (%)\n" + "\n".join(out)


def derive_seed(root_seed: int, novel_class: int, replicate: int = 0) -> int:
    key = (novel_class,) if replicate == 0 else (novel_class, replicate)
    return int(np.random.SeedSequence(root_seed, spawn_key=key).generate_state(1)[0] & 0x7FFFFFFF)


def evaluate_split(train_set: ImageSet, test_set: ImageSet, cfg: TrainConfig, bandwidth="median",
                   baseline: bool = False, model: SNDNet | None = None, out_dir=None) -> tuple[dict, NoveltyScores, SNDNet]:
    """Train (unless ``model`` is given), fit the KDE on training subject features and score ``test_set``."""
    if model is None:
        model, _ = train(train_set.training_view(), cfg, out_dir=out_dir)
    kde = fit_kde(subject_features(train_set.images, model), bandwidth, seed=cfg.seed)
    scores = score_dataset(test_set.images, model, kde)
    res = {
        "auroc": auroc(scores.values, test_set.is_novel),
        "auprc": auprc(scores.values, test_set.is_novel),
        "n_normal": int((~test_set.is_novel).sum()),
        "n_novel": int(test_set.is_novel.sum()),
        "bandwidth": kde.bandwidth,
    }
    if baseline:
        b = raw_kde_baseline(train_set.images, test_set.images, bandwidth)
        res["baseline_auroc"] = auroc(b.values, test_set.is_novel)
        res["baseline_auprc"] = auprc(b.values, test_set.is_novel)
    return res, scores, model


def _run_once(digits, labels, palette, cfg, c, classes, split_kw, bandwidth, baseline, seed) -> dict:
    spec = SplitSpec.leave_one_out(c, classes=classes, seed=seed, **split_kw)
    train_set, test_set = build_split(digits, labels, palette, spec)
    cfg_c = TrainConfig(**{**cfg.to_dict(), "seed": seed, "n_components": palette.K})
    res, _, _ = evaluate_split(train_set, test_set, cfg_c, bandwidth, baseline)
    res.pop("bandwidth")
    return res


def _run_class(args) -> ClassResult:
    digits, labels, palette, cfg, c, classes, split_kw, bandwidth, baseline, n_seeds = args
    seeds = [derive_seed(cfg.seed, c, r) for r in range(n_seeds)]
    try:
        runs = [{"seed": s, **_run_once(digits, labels, palette, cfg, c, classes, split_kw, bandwidth, baseline, s)}
                for s in seeds]
    except Exception as exc:  # noqa: BLE001 - recorded per class, protocol keeps going
        logger.exception("class %s failed", c)
        return ClassResult(novel_class=c, status="failed", seed=seeds[0], error=f"{type(exc).__name__}: {exc}")
    if n_seeds == 1:
        return ClassResult(novel_class=c, **runs[0])
    merged = {k: float(np.mean([r[k] for r in runs])) for k in runs[0] if k not in ("seed", "n_normal", "n_novel")}
    return ClassResult(novel_class=c, seed=seeds[0], n_normal=runs[0]["n_normal"], n_novel=runs[0]["n_novel"],
                       replicates=runs, **merged)


def run_protocol(digits, labels, palette: Palette, cfg: TrainConfig, classes=None, all_classes=None,
                 split_kw: dict | None = None, bandwidth="median", baseline: bool = False, parallel: int = 1,
                 n_seeds: int = 1) -> EvalReport:
    """Hold out each class in ``classes`` in turn; normals are every other class in ``all_classes``.

    With ``n_seeds > 1`` each cell averages that many independently seeded
    split/training draws and keeps the per-seed values in ``replicates``.
    """
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    all_classes = sorted(np.unique(labels).tolist()) if all_classes is None else list(all_classes)
    classes = all_classes if classes is None else [int(c) for c in classes]
    split_kw = dict(split_kw or {})
    jobs = [(digits, labels, palette, cfg, c, all_classes, split_kw, bandwidth, baseline, n_seeds) for c in classes]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as ex:
            results = list(ex.map(_run_class, jobs))
    else:
        results = [_run_class(j) for j in jobs]
    config = {
        "train": cfg.to_dict(),
        "palette": palette.to_dict(),
        "split": split_kw,
        "bandwidth": bandwidth,
        "classes": classes,
        "all_classes": all_classes,
        "n_seeds": n_seeds,
    }
    return EvalReport(per_class={r.novel_class: r for r in results}, config=config, seeds={r.novel_class: r.seed for r in results})


# --------------------------------------------------------------------------
# Latent export and projections
# --------------------------------------------------------------------------


def export_latents(path, images, model: SNDNet, labels=None, background_ids=None) -> np.ndarray:
    """Write ``z_f``, ``z_s``, ``z_b`` per sample to CSV; returns the numeric table."""
    bundle = encode_array(model, images)
    n, d = bundle.z_f.shape
    labels = np.full(n, -1) if labels is None else np.asarray(labels)
    background_ids = np.full(n, -1) if background_ids is None else np.asarray(background_ids)
    table = np.column_stack([np.arange(n), labels, background_ids, bundle.z_f, bundle.z_s, bundle.z_b])
    header = ["sample_id", "class_label", "background_id"] + [f"{p}_{j}" for p in ("zf", "zs", "zb") for j in range(d)]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in table:
            w.writerow([int(row[0]), int(row[1]), int(row[2])] + [repr(float(v)) for v in row[3:]])
    return table


def read_latents(path) -> dict[str, np.ndarray]:
    with Path(path).open() as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], np.array(rows[1:], dtype=np.float64).reshape(-1, len(rows[0]))
    cols = {p: [i for i, h in enumerate(header) if h.startswith(p + "_")] for p in ("zf", "zs", "zb")}
    return {
        "sample_id": data[:, 0].astype(int),
        "class_label": data[:, 1].astype(int),
        "background_id": data[:, 2].astype(int),
        "z_f": data[:, cols["zf"]],
        "z_s": data[:, cols["zs"]],
        "z_b": data[:, cols["zb"]],
    }


def project_2d(x: np.ndarray, method: str = "pca", seed: int = 0) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if method == "pca":
        from sklearn.decomposition import PCA

        pca = PCA(n_components=2, svd_solver="full").fit(x)
        # elementwise product and per-row reduction: identical rows give bitwise-identical points,
        # which a blocked BLAS matmul does not guarantee
        return ((x - pca.mean_)[:, None, :] * pca.components_[None]).sum(-1)
    if method == "tsne":
        from sklearn.manifold import TSNE

        return TSNE(n_components=2, random_state=seed, init="pca", perplexity=min(30.0, max(5.0, len(x) / 4))).fit_transform(x)
    raise ValueError(f"unknown projection {method!r}")


PAIRINGS = (("z_s", "z_b", "Subject vs. Background"), ("z_s", "z_f", "Subject vs. Original"), ("z_b", "z_f", "Background vs. Original"))


def plot_latents(latents: dict, path, method: str = "pca", seed: int = 0, max_points: int = 2000) -> None:
    """Three panels, each a joint 2-D projection of two feature sets."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    n = len(latents["z_s"])
    idx = np.arange(n) if n <= max_points else np.random.default_rng(seed).choice(n, max_points, replace=False)
    fig, axes = plt.subplots(1, 3, figsize=(15, 4.8))
    for ax, (a, b, title) in zip(axes, PAIRINGS):
        pts = project_2d(np.vstack([latents[a][idx], latents[b][idx]]), method, seed)
        k = len(idx)
        ax.scatter(pts[:k, 0], pts[:k, 1], s=4, alpha=0.6, label=a)
        ax.scatter(pts[k:, 0], pts[k:, 1], s=4, alpha=0.6, label=b)
        ax.set_title(title)
        ax.legend(markerscale=3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def mean_gap(scores, group_a, group_b) -> float:
    """Standardized mean score difference ``(mean_a - mean_b) / pooled std``."""
    scores = np.asarray(scores, dtype=np.float64)
    a, b = scores[group_a], scores[group_b]
    pooled = math.sqrt(0.5 * (a.var(ddof=1) + b.var(ddof=1)))
    return float((a.mean() - b.mean()) / pooled) if pooled > 0 else float(a.mean() - b.mean())
