"""Mini-batch Gaussian mixture over background latents and its energy.

Mixture parameters are re-estimated from every batch from soft memberships,
so gradients of the energy flow through both the memberships and the batch
statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

LOG_2PI = math.log(2 * math.pi)
PI_FLOOR = 1e-12
DEFAULT_EPS = 1e-6


@dataclass
class GmmParams:
    pi: torch.Tensor  # (K,)
    mu: torch.Tensor  # (K, d)
    log_var: torch.Tensor  # (K, d), s_k = log(sigma^2 + eps)
    eps: float = DEFAULT_EPS
    degenerate: torch.Tensor | None = None  # (K,) bool, component fell back to batch moments

    @property
    def var(self):
        return self.log_var.exp()


@dataclass
class EnergyBatch:
    values: torch.Tensor
    mean: torch.Tensor
    params: GmmParams


def estimate_params(z_b, gamma, eps: float = DEFAULT_EPS) -> GmmParams:
    """Responsibility-weighted weights, means and diagonal variances.

    A component with zero total responsibility takes the global batch mean and
    variance and is flagged in ``degenerate``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if z_b.ndim != 2 or gamma.ndim != 2 or z_b.shape[0] != gamma.shape[0]:
        raise ValueError(f"expected (L, d) and (L, K) inputs, got {tuple(z_b.shape)} and {tuple(gamma.shape)}")
    L = z_b.shape[0]
    if L < 1:
        raise ValueError("need at least one sample")
    n_k = gamma.sum(0)
    dead = n_k <= PI_FLOOR
    safe_n = torch.where(dead, torch.ones_like(n_k), n_k)

    mu = gamma.T @ z_b / safe_n[:, None]
    diff = z_b[None, :, :] - mu[:, None, :]
    var = (gamma.T[:, :, None] * diff**2).sum(1) / safe_n[:, None]

    if bool(dead.any()):
        g_mu = z_b.mean(0, keepdim=True)
        g_var = ((z_b - g_mu) ** 2).mean(0, keepdim=True)
        mu = torch.where(dead[:, None], g_mu.expand_as(mu), mu)
        var = torch.where(dead[:, None], g_var.expand_as(var), var)

    return GmmParams(pi=n_k / L, mu=mu, log_var=torch.log(var + eps), eps=eps, degenerate=dead)


def component_log_density(z, params: GmmParams):
    """``(L, K)`` matrix of ``log pi_k + log N(z | mu_k, diag(exp(s_k)))``."""
    d = z.shape[-1]
    diff = z[:, None, :] - params.mu[None, :, :]
    quad = (diff**2 / params.log_var.exp()[None]).sum(-1)
    # the floor stands in only for empty components; nonzero weights enter exactly
    log_pi = torch.log(torch.where(params.pi > 0, params.pi, torch.full_like(params.pi, PI_FLOOR)))
    return (
        log_pi[None]
        - 0.5 * d * LOG_2PI
        - 0.5 * params.log_var.sum(-1)[None]
        - 0.5 * quad
    )


def energy(z, params: GmmParams):
    """Negative mixture log-density, evaluated with log-sum-exp. ``z`` is ``(d,)`` or ``(L, d)``."""
    single = z.ndim == 1
    z = z[None] if single else z
    e = -torch.logsumexp(component_log_density(z, params), dim=-1)
    return e[0] if single else e


def energy_batch(z_b, gamma, eps: float = DEFAULT_EPS) -> EnergyBatch:
    params = estimate_params(z_b, gamma, eps)
    values = energy(z_b, params)
    return EnergyBatch(values=values, mean=values.mean(), params=params)
