"""Subject novelty detection: disentangle subject from background, score novelty on the subject."""

from .datasets import ImageSet, Palette, SplitSpec, build_split, colorize, default_palette, read_idx_images
from .estimator import KDENoveltyScorer, SubjectNoveltyDetector
from .evaluator import EvalReport, run_protocol
from .metrics import auprc, auroc
from .nets import ArchConfig, SNDNet, load_checkpoint, save_checkpoint
from .score import fit_kde, novelty_score, raw_kde_baseline, score_dataset
from .train import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ArchConfig",
    "EvalReport",
    "ImageSet",
    "KDENoveltyScorer",
    "Palette",
    "SNDNet",
    "SplitSpec",
    "SubjectNoveltyDetector",
    "TrainConfig",
    "auprc",
    "auroc",
    "build_split",
    "colorize",
    "default_palette",
    "fit_kde",
    "load_checkpoint",
    "novelty_score",
    "raw_kde_baseline",
    "read_idx_images",
    "run_protocol",
    "save_checkpoint",
    "score_dataset",
    "train",
]
