"""Gaussian KDE novelty scores on subject features, and a raw-pixel control."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist
from scipy.special import logsumexp

from .nets import ConfigurationError, SNDNet, encode_array

logger = logging.getLogger(__name__)

MEDIAN_SUBSAMPLE = 2000
BANK_CAP = 10_000
MIN_BANDWIDTH = 1e-3
# exp() of anything below this is subnormal or zero in float64
_LOG_TINY = math.log(np.finfo(np.float64).tiny)


@dataclass(frozen=True)
class KdeModel:
    bank: np.ndarray
    bandwidth: float

    @property
    def dim(self) -> int:
        return self.bank.shape[1]

    @property
    def n(self) -> int:
        return self.bank.shape[0]


@dataclass(frozen=True)
class NoveltyScores:
    """``values`` is ``-density`` or, when ``log_space`` is set, ``-log density``.

    Higher means more novel in both representations.
    """

    values: np.ndarray
    log_space: bool

    def __len__(self):
        return len(self.values)


def median_heuristic(x: np.ndarray, max_points: int = MEDIAN_SUBSAMPLE, seed: int = 0) -> float:
    if len(x) > max_points:
        x = x[np.random.default_rng(seed).choice(len(x), max_points, replace=False)]
    if len(x) < 2:
        return 0.0
    return float(np.median(pdist(x)) / math.sqrt(2))


def scott_bandwidth(x: np.ndarray) -> float:
    n, d = x.shape
    if n < 2:
        return 0.0
    return float(n ** (-1.0 / (d + 4)) * np.std(x, axis=0, ddof=1).mean())


def fit_kde(features, bandwidth="median", max_bank: int | None = BANK_CAP, seed: int = 0) -> KdeModel:
    """Store the feature bank and resolve the bandwidth.

    ``bandwidth`` is a positive number, ``"median"`` (median pairwise distance
    over sqrt 2) or ``"scott"``. A bandwidth that resolves to zero falls back
    to ``MIN_BANDWIDTH``.
    """
    bank = np.asarray(features, dtype=np.float64)
    if bank.ndim != 2 or len(bank) < 1:
        raise ValueError("features must be a non-empty (N, d) array")
    if max_bank is not None and len(bank) > max_bank:
        bank = bank[np.sort(np.random.default_rng(seed).choice(len(bank), max_bank, replace=False))]

    if isinstance(bandwidth, str):
        if bandwidth in ("median", "median_heuristic"):
            h = median_heuristic(bank, seed=seed)
        elif bandwidth == "scott":
            h = scott_bandwidth(bank)
        else:
            raise ValueError(f"unknown bandwidth mode {bandwidth!r}")
    else:
        h = float(bandwidth)
        if not h > 0:
            raise ValueError("fixed bandwidth must be positive")
    if not h > 0 or not math.isfinite(h):
        warnings.warn(f"bandwidth resolved to {h}; falling back to {MIN_BANDWIDTH}", RuntimeWarning, stacklevel=2)
        h = MIN_BANDWIDTH
    return KdeModel(bank=bank, bandwidth=h)


def log_density(z, kde: KdeModel, chunk: int = 1024) -> np.ndarray:
    """Log of the isotropic Gaussian KDE at each row of ``z``."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[1] != kde.dim:
        raise ConfigurationError(f"query dim {z.shape[1]} != KDE dim {kde.dim}")
    h2 = kde.bandwidth**2
    bank_sq = (kde.bank**2).sum(1)
    const = -math.log(kde.n) - 0.5 * kde.dim * math.log(2 * math.pi * h2)
    out = np.empty(len(z))
    for s in range(0, len(z), chunk):
        q = z[s : s + chunk]
        # exact differences for small banks, expanded form otherwise
        if kde.n * kde.dim <= 100_000:
            sq = ((q[:, None, :] - kde.bank[None]) ** 2).sum(-1)
        else:
            sq = np.maximum((q**2).sum(1)[:, None] + bank_sq[None] - 2 * q @ kde.bank.T, 0.0)
        out[s : s + chunk] = logsumexp(-sq / (2 * h2), axis=1) + const
    return out


def novelty_score(z, kde: KdeModel, log_space: bool | None = None) -> NoveltyScores:
    """Negative KDE density of each query (higher = more novel).

    With ``log_space=None`` the raw negative density is returned whenever every
    density in the call is representable, else ``-log density`` for all of
    them so that the ranking is consistent within one call.
    """
    ld = log_density(z, kde)
    if log_space is None:
        log_space = bool(len(ld)) and bool(np.any(ld < _LOG_TINY) or np.any(ld > 700))
    values = -ld if log_space else -np.exp(ld)
    return NoveltyScores(values=values, log_space=bool(log_space))


def subject_features(images, model: SNDNet) -> np.ndarray:
    return encode_array(model, images).z_s


def score_dataset(images, model: SNDNet, kde: KdeModel, log_space: bool | None = None) -> NoveltyScores:
    """Encode images to subject features and score them, preserving input order."""
    if model.cfg.latent_dim != kde.dim:
        raise ConfigurationError(f"checkpoint latent dim {model.cfg.latent_dim} != KDE dim {kde.dim}")
    if len(images) == 0:
        return NoveltyScores(values=np.zeros(0), log_space=bool(log_space))
    return novelty_score(subject_features(images, model), kde, log_space=log_space)


def raw_kde_baseline(train_images, test_images, bandwidth="median", log_space: bool | None = None) -> NoveltyScores:
    """KDE on flattened pixels: the control that ignores background shifts."""
    train_images = np.asarray(train_images)
    test_images = np.asarray(test_images)
    if train_images.shape[1:] != test_images.shape[1:]:
        raise ValueError(f"image shapes differ: {train_images.shape[1:]} vs {test_images.shape[1:]}")
    kde = fit_kde(train_images.reshape(len(train_images), -1), bandwidth)
    if len(test_images) == 0:
        return NoveltyScores(values=np.zeros(0), log_space=bool(log_space))
    return novelty_score(test_images.reshape(len(test_images), -1), kde, log_space=log_space)
