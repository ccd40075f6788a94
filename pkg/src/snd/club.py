"""Sampled contrastive log-ratio upper bound on I(z_s; z_b).

A variational Gaussian q(z_b | z_s) scores every (z_s^i, z_b^j) pair of a
batch; the estimate is the mean positive-pair log-density minus the mean over
all pairs. Training alternates a critic step on q with an encoder step that
minimizes the estimate through frozen q.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import torch
from torch.func import functional_call

LOG_2PI = math.log(2 * math.pi)
CRITIC_OBJECTIVES = ("mi", "mle")


class MiEstimate(NamedTuple):
    value: torch.Tensor
    batch_size: int


def log_q(z_b, mean, logvar):
    """Diagonal Gaussian log-density, summed over the last axis."""
    return (-0.5 * LOG_2PI - 0.5 * logvar - (z_b - mean) ** 2 / (2 * logvar.exp())).sum(-1)


def pairwise_log_q(z_b, mean, logvar):
    """``M[i, j] = log q(z_b^j | z_s^i)`` for conditional parameters ``mean[i]``, ``logvar[i]``."""
    diff = z_b[None, :, :] - mean[:, None, :]
    inv = (2 * logvar.exp())[:, None, :]
    return (-0.5 * LOG_2PI - 0.5 * logvar[:, None, :] - diff**2 / inv).sum(-1)


def mi_estimate(z_s, z_b, q) -> MiEstimate:
    """Eq.-style double average, all ``j`` (including ``j == i``) in the inner mean.

    ``q`` maps a batch of ``z_s`` to ``(mean, logvar)``. Positive terms are the
    diagonal of the pairwise matrix, so ``N == 1`` gives exactly zero.
    """
    if z_s.shape[0] != z_b.shape[0]:
        raise ValueError(f"batch length mismatch: {z_s.shape[0]} vs {z_b.shape[0]}")
    mean, logvar = q(z_s)
    m = pairwise_log_q(z_b, mean, logvar)
    value = m.diagonal().mean() - m.mean(dim=1).mean()
    return MiEstimate(value, int(z_s.shape[0]))


def frozen(module):
    """Call ``module`` with detached parameters: gradients reach inputs, never the weights."""
    params = {k: v.detach() for k, v in module.named_parameters()}
    buffers = dict(module.named_buffers())

    def call(*args):
        return functional_call(module, {**params, **buffers}, args)

    return call


def club_update_step(z_s, z_b, q_module, mode: str, objective: str = "mi"):
    """Loss for one half of the alternating schedule.

    ``critic``: latents are detached; minimizing the returned loss maximizes
    the estimate (``objective="mi"``) or the positive-pair log-likelihood
    (``objective="mle"``) with respect to ``q_module`` only.

    ``encoder``: returns the estimate itself, evaluated through a frozen copy of
    ``q_module`` so gradients only reach the latents.
    """
    if mode == "critic":
        z_s, z_b = z_s.detach(), z_b.detach()
        if objective == "mi":
            return -mi_estimate(z_s, z_b, q_module).value
        if objective == "mle":
            mean, logvar = q_module(z_s)
            return -log_q(z_b, mean, logvar).mean()
        raise ValueError(f"unknown critic objective {objective!r}; expected one of {CRITIC_OBJECTIVES}")
    if mode == "encoder":
        return mi_estimate(z_s, z_b, frozen(q_module)).value
    raise ValueError(f"unknown mode {mode!r}; expected 'critic' or 'encoder'")
