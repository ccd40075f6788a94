"""``snd`` command line: gen-data, train, score, eval, export-latents, plot.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import datasets as ds
from .config import ConfigError, ResolvedConfig, resolve
from .evaluator import ClassResult, EvalReport, evaluate_split, export_latents, plot_latents, read_latents, run_protocol
from .nets import load_checkpoint
from .score import fit_kde, score_dataset, subject_features
from .train import train

logger = logging.getLogger("snd")


class UsageError(Exception):
    pass


def _int_list(s: str) -> list[int]:
    try:
        return [int(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None


def _colors(s: str) -> list[list[float]]:
    """``"1,1,1;1,1,0"`` -> ``[[1, 1, 1], [1, 1, 0]]``."""
    try:
        return [[float(v) for v in c.split(",")] for c in s.split(";") if c.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'r,g,b;r,g,b', got {s!r}") from None


def _bandwidth(s: str):
    try:
        return float(s)
    except ValueError:
        return s


def _common(p: argparse.ArgumentParser, train_flags=False, data_flags=False):
    p.add_argument("--config", help="TOML or JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--bandwidth", type=_bandwidth, help="'median', 'scott' or a positive number")
    if train_flags:
        p.add_argument("--omega1", type=float)
        p.add_argument("--omega2", type=float)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--learning-rate", dest="learning_rate", type=float)
        p.add_argument("--weight-decay", dest="weight_decay", type=float)
        p.add_argument("--latent-dim", dest="latent_dim", type=int)
        p.add_argument("--k-backgrounds", dest="n_components", type=int)
        p.add_argument("--critic-ratio", dest="critic_ratio", type=int)
        p.add_argument("--critic-objective", dest="critic_objective", choices=["mi", "mle"])
    if data_flags:
        p.add_argument("--n-train", dest="n_train", type=int)
        p.add_argument("--n-test", dest="n_test", type=int)
        p.add_argument("--novel-fraction", dest="novel_fraction", type=float)
        p.add_argument("--train-colors", dest="train_colors", type=_colors)
        p.add_argument("--unseen-colors", dest="unseen_colors", type=_colors)


_CONFIG_KEYS = (
    "seed", "bandwidth", "omega1", "omega2", "epochs", "batch_size", "learning_rate", "weight_decay",
    "latent_dim", "n_components", "critic_ratio", "critic_objective", "n_train", "n_test", "novel_fraction",
    "train_colors", "unseen_colors", "novel_class",
)


def _resolve(args) -> ResolvedConfig:
    overrides = {k: getattr(args, k) for k in _CONFIG_KEYS if hasattr(args, k)}
    return resolve(getattr(args, "config", None), overrides)


def _palette(cfg: ResolvedConfig) -> ds.Palette:
    names = cfg["color_names"]
    n = len(cfg["train_colors"]) + len(cfg["unseen_colors"])
    try:
        return ds.Palette(
            train_colors=tuple(map(tuple, cfg["train_colors"])),
            test_unseen_colors=tuple(map(tuple, cfg["unseen_colors"])),
            names=tuple(names) if len(names) == n else (),
        )
    except ValueError as exc:
        raise ConfigError(f"palette: {exc}") from exc


def _source_digits(args):
    if args.images or args.labels:
        if not (args.images and args.labels):
            raise UsageError("--images and --labels must be given together")
        paths = (Path(args.images), Path(args.labels))
    else:
        mnist_dir = args.mnist_dir or ds.default_mnist_dir()
        if not mnist_dir:
            raise UsageError("no digit source: pass --mnist-dir DIR (or --images/--labels, or set SND_MNIST_DIR)")
        try:
            paths = ds.find_idx_pair(mnist_dir)
        except FileNotFoundError as exc:
            raise UsageError(str(exc)) from None
    for p in paths:
        if not p.is_file():
            raise UsageError(f"missing source file {p}")
    return ds.load_idx_digits(*paths)


def _split_spec(cfg: ResolvedConfig, novel_class: int) -> ds.SplitSpec:
    return ds.SplitSpec.leave_one_out(
        novel_class, classes=cfg["classes"], n_train=cfg["n_train"], n_test=cfg["n_test"],
        novel_fraction=cfg["novel_fraction"], seed=cfg["seed"], stratified=cfg["stratified"],
    )


def _load_data(path):
    path = Path(path)
    if not (path / ds.MANIFEST).is_file():
        raise UsageError(f"{path} is not a dataset directory ({ds.MANIFEST} missing); run gen-data first")
    return ds.load_dataset(path)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _resolve(args)
    palette = _palette(cfg)
    digits, labels = _source_digits(args)
    spec = _split_spec(cfg, cfg["novel_class"])
    train_set, test_set = ds.build_split(digits, labels, palette, spec)
    manifest = ds.save_dataset(args.out, train_set, test_set, palette, spec, extra={"config_hash": cfg.hash()})
    print(f"wrote {args.out}: {manifest['counts']} checksum {manifest['checksum'][:16]}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve(args)
    train_set, _, manifest = _load_data(args.data)
    tcfg = cfg.train_config(n_components=len(manifest["palette"]["train_colors"])) if args.n_components is None else cfg.train_config()
    out = Path(args.out)
    _, log = train(train_set.training_view(), tcfg, out_dir=out,
                   run_meta={"resolved_config": cfg.to_dict(), "dataset_checksum": manifest["checksum"]})
    for epoch, (r, e, m, t) in enumerate(zip(*(log.epoch_means(k) for k in ("rec", "energy", "mi", "total"))), 1):
        print(f"epoch {epoch:4d}  rec {r:10.4f}  energy {e:10.4f}  mi {m:9.4f}  total {t:10.4f}")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"checkpoint {out / 'model.pt'} ({len(log.records)} steps)")
    return 0


def _write_scores(path, test_set, scores):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "class_label", "background_id", "is_novel", "score", "log_space"])
        for i in range(len(test_set)):
            w.writerow([i, int(test_set.labels[i]), int(test_set.background_ids[i]), int(test_set.is_novel[i]),
                        repr(float(scores.values[i])), int(scores.log_space)])


def cmd_score(args) -> int:
    cfg = _resolve(args)
    train_set, test_set, _ = _load_data(args.data)
    model, meta = load_checkpoint(args.checkpoint)
    kde = fit_kde(subject_features(train_set.images, model), cfg["bandwidth"], seed=cfg["seed"])
    scores = score_dataset(test_set.images, model, kde)
    _write_scores(args.out, test_set, scores)
    print(f"wrote {len(scores)} scores to {args.out} (bandwidth {kde.bandwidth:.6g}, log_space={scores.log_space})")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.protocol or args.classes is not None:
        digits, labels = _source_digits(args)
        palette = _palette(cfg)
        tcfg = cfg.train_config(n_components=palette.K)
        split_kw = {"n_train": cfg["n_train"], "n_test": cfg["n_test"], "novel_fraction": cfg["novel_fraction"],
                    "stratified": cfg["stratified"]}
        classes = args.classes if args.classes is not None else cfg["classes"]
        report = run_protocol(digits, labels, palette, tcfg, classes=classes, all_classes=cfg["classes"],
                              split_kw=split_kw, bandwidth=cfg["bandwidth"], baseline=args.baseline, parallel=args.parallel,
                              n_seeds=args.n_seeds)
    else:
        if not args.data:
            raise UsageError("single-split eval needs --data (and optionally --checkpoint); or use --protocol")
        train_set, test_set, manifest = _load_data(args.data)
        model = None
        if args.checkpoint:
            model, _ = load_checkpoint(args.checkpoint)
        tcfg = cfg.train_config(n_components=len(manifest["palette"]["train_colors"]))
        res, scores, _ = evaluate_split(train_set, test_set, tcfg, cfg["bandwidth"], args.baseline, model=model)
        res.pop("bandwidth")
        c = int(manifest["spec"]["novel_class"])
        report = EvalReport({c: ClassResult(novel_class=c, seed=tcfg.seed, **res)},
                            config={"train": tcfg.to_dict(), "dataset_checksum": manifest["checksum"],
                                    "bandwidth": cfg["bandwidth"]},
                            seeds={c: tcfg.seed})
        _write_scores(out / "scores.csv", test_set, scores)
    report.config["config_hash"] = cfg.hash()
    report.write_json(out / "report.json")
    table = report.render_table("auroc") + "\n\n" + report.render_table("auprc") + "\n"
    (out / "report.txt").write_text(table)
    print(table)
    if report.completeness < 1:
        print(f"warning: {len(report.per_class) - len(report._ok())} class run(s) failed", file=sys.stderr)
        return 1
    return 0


def cmd_export_latents(args) -> int:
    train_set, test_set, _ = _load_data(args.data)
    part = train_set if args.split == "train" else test_set
    model, _ = load_checkpoint(args.checkpoint)
    table = export_latents(args.out, part.images, model, part.labels, part.background_ids)
    print(f"wrote {table.shape[0]} rows x {table.shape[1]} columns to {args.out}")
    return 0


def cmd_plot(args) -> int:
    latents = read_latents(args.latents)
    plot_latents(latents, args.out, method=args.method, seed=args.seed or 0)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="snd", description="Subject novelty detection under background shift")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="build a colorized leave-one-class-out split")
    _common(p, data_flags=True)
    p.add_argument("--mnist-dir", help="directory with MNIST IDX files")
    p.add_argument("--images")
    p.add_argument("--labels")
    p.add_argument("--novel-class", dest="novel_class", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train on a dataset directory")
    _common(p, train_flags=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="KDE novelty scores for a dataset's test split")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="single-split evaluation or the full protocol")
    _common(p, train_flags=True, data_flags=True)
    p.add_argument("--data")
    p.add_argument("--checkpoint")
    p.add_argument("--protocol", action="store_true", help="leave-one-class-out over --classes")
    p.add_argument("--classes", type=_int_list)
    p.add_argument("--mnist-dir")
    p.add_argument("--images")
    p.add_argument("--labels")
    p.add_argument("--baseline", action="store_true", help="add the raw-pixel KDE column")
    p.add_argument("--parallel", type=int, default=1, help="worker processes for per-class runs")
    p.add_argument("--n-seeds", dest="n_seeds", type=int, default=1, help="seeds averaged per protocol cell")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-latents", help="write z_f, z_s, z_b per sample to CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_latents)

    p = sub.add_parser("plot", help="2-D projections of exported latents")
    p.add_argument("--latents", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=["pca", "tsne"], default="pca")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"snd {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        logger.debug("failure", exc_info=True)
        print(f"snd {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
