"""Ranking metrics with explicit tie conventions."""

from fractions import Fraction

import numpy as np
from scipy.stats import rankdata


class UndefinedMetricError(ValueError):
    pass


def _prepare(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).astype(bool).ravel()
    if scores.shape != labels.shape:
        raise ValueError(f"{scores.shape[0]} scores but {labels.shape[0]} labels")
    return scores, labels


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC; ``labels`` true for novel. Ties count one half."""
    scores, labels = _prepare(scores, labels)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both novel and normal samples")
    ranks = rankdata(scores)  # average ranks, exact halves for ties
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def auprc(scores, labels) -> float:
    """Average precision, tied scores grouped into a single threshold step.

    Accumulated in exact rationals, so the result is the correctly rounded value.
    """
    scores, labels = _prepare(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetricError("AUPRC needs at least one novel sample")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    # last position of each group of equal scores
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp, fp = tp[ends], fp[ends]
    d_tp = np.diff(np.r_[0, tp])
    total = sum(Fraction(int(d_tp[i]) * int(tp[i]), int(tp[i] + fp[i])) for i in range(len(tp)) if d_tp[i])
    return float(total / n_pos)
