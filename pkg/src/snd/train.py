"""Composite objective and the alternating critic/encoder training loop."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from .club import CRITIC_OBJECTIVES, club_update_step
from .gmm import energy_batch
from .nets import ArchConfig, SNDNet, save_checkpoint

logger = logging.getLogger(__name__)


class NonFiniteLossError(RuntimeError):
    def __init__(self, message, components=None):
        super().__init__(message)
        self.components = components or {}


class CheckpointError(OSError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    omega1: float = 1.0
    omega2: float = 0.1
    batch_size: int = 128
    epochs: int = 100
    learning_rate: float = 1e-3
    weight_decay: float = 5.0
    seed: int = 0
    eps: float = 1e-6
    critic_ratio: int = 1
    critic_objective: str = "mle"
    latent_dim: int = 32
    n_components: int = 3
    checkpoint_every: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.omega1 < 0 or self.omega2 < 0:
            raise ValueError("omega1 and omega2 must be non-negative")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 0 or self.critic_ratio < 0:
            raise ValueError("epochs and critic_ratio must be >= 0")
        if self.critic_objective not in CRITIC_OBJECTIVES:
            raise ValueError(f"critic_objective must be one of {CRITIC_OBJECTIVES}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def arch(self, input_shape=(3, 28, 28)) -> ArchConfig:
        return ArchConfig(latent_dim=self.latent_dim, n_components=self.n_components, input_shape=tuple(input_shape))

    @property
    def torch_dtype(self):
        return getattr(torch, self.dtype)


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)
    seed: int = 0
    config_hash: str = ""
    config: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0
    meta: dict = field(default_factory=dict)

    def epoch_means(self, key: str) -> list[float]:
        by_epoch: dict[int, list[float]] = {}
        for r in self.records:
            by_epoch.setdefault(r["epoch"], []).append(r[key])
        return [float(np.mean(by_epoch[e])) for e in sorted(by_epoch)]

    def write_jsonl(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            header = {"type": "header", "seed": self.seed, "config_hash": self.config_hash, "config": self.config, "meta": self.meta}
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for r in self.records:
                fh.write(json.dumps({"type": "step", **r}, sort_keys=True) + "\n")
            fh.write(json.dumps({"type": "summary", "wall_clock_s": self.wall_clock_s, "n_steps": len(self.records)}, sort_keys=True) + "\n")

    @classmethod
    def read_jsonl(cls, path) -> "TrainLog":
        log = cls()
        for line in Path(path).read_text().splitlines():
            rec = json.loads(line)
            kind = rec.pop("type")
            if kind == "header":
                log.seed, log.config_hash, log.config = rec["seed"], rec["config_hash"], rec["config"]
                log.meta = rec.get("meta", {})
            elif kind == "step":
                log.records.append(rec)
            else:
                log.wall_clock_s = rec["wall_clock_s"]
        return log


def reconstruction_loss(x, x_hat):
    """Squared L2 error summed over channels and pixels, averaged over the batch."""
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    return ((x - x_hat) ** 2).flatten(1).sum(1).mean()


def total_loss(x, model: SNDNet, cfg: TrainConfig):
    """``L_rec + omega1 * mean energy + omega2 * MI`` from a single forward pass.

    The MI term is evaluated through a frozen variational net. Returns the
    scalar and a dict of float components for logging.
    """
    if x.shape[0] < 2:
        raise ValueError("total_loss needs a batch of at least 2 images")
    bundle = model.encode(x)
    gamma = model.memberships(bundle.z_b)
    eb = energy_batch(bundle.z_b, gamma, cfg.eps)
    rec = model.decode(bundle.z_s, bundle.z_b)
    l_rec = reconstruction_loss(x, rec.x_hat)
    mi = club_update_step(bundle.z_s, bundle.z_b, model.variational, "encoder")
    total = l_rec + cfg.omega1 * eb.mean + cfg.omega2 * mi
    components = {"rec": l_rec.item(), "energy": eb.mean.item(), "mi": mi.item(), "total": total.item()}
    if not all(math.isfinite(v) for v in components.values()):
        raise NonFiniteLossError(f"non-finite loss: {components}", components)
    return total, components


def _batches(n: int, batch_size: int, gen: torch.Generator):
    perm = torch.randperm(n, generator=gen)
    for start in range(0, n, batch_size):
        idx = perm[start : start + batch_size]
        if len(idx) >= 2:
            yield idx


def train(images, cfg: TrainConfig, out_dir=None, model: SNDNet | None = None, log_every: int = 0,
          callback=None, run_meta: dict | None = None) -> tuple[SNDNet, TrainLog]:
    """Fit the model on an ``(N, C, H, W)`` image stack.

    Per mini-batch: ``critic_ratio`` critic updates of the variational net on
    detached latents, then one update of every other parameter group on the
    total loss. A final batch of one image is dropped. If ``out_dir`` is
    given, ``model.pt`` and ``train_log.jsonl`` are written there.
    ``callback(epoch, model, log)`` runs after every epoch. ``run_meta`` is
    embedded in the log header and every checkpoint.
    """
    x_all = torch.as_tensor(np.asarray(images)).to(cfg.torch_dtype)
    if len(x_all) < 2:
        raise ValueError("need at least two training images")
    torch.manual_seed(cfg.seed)
    if model is None:
        model = SNDNet(cfg.arch(tuple(x_all.shape[1:])))
    model.to(cfg.torch_dtype)
    model.train()

    opt_main = torch.optim.AdamW(model.main_parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    opt_critic = torch.optim.Adam(model.critic_parameters(), lr=cfg.learning_rate)
    gen = torch.Generator().manual_seed(cfg.seed)

    log = TrainLog(seed=cfg.seed, config_hash=cfg.hash(), config=cfg.to_dict(), meta=dict(run_meta or {}))
    out_dir = Path(out_dir) if out_dir is not None else None
    t0 = time.perf_counter()
    step = 0
    try:
        for epoch in range(1, cfg.epochs + 1):
            for idx in _batches(len(x_all), cfg.batch_size, gen):
                x = x_all[idx]
                critic_losses = []
                if cfg.critic_ratio:
                    with torch.no_grad():
                        z = model.encode(x)
                    for _ in range(cfg.critic_ratio):
                        loss_c = club_update_step(z.z_s, z.z_b, model.variational, "critic", cfg.critic_objective)
                        opt_critic.zero_grad(set_to_none=True)
                        loss_c.backward()
                        opt_critic.step()
                        critic_losses.append(loss_c.item())

                loss, comp = total_loss(x, model, cfg)
                opt_main.zero_grad(set_to_none=True)
                loss.backward()
                opt_main.step()
                step += 1
                log.records.append({"step": step, "epoch": epoch, **comp, "critic_losses": critic_losses})
                if log_every and step % log_every == 0:
                    logger.info("step %d %s", step, comp)
            if out_dir is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                _checkpoint(out_dir / f"model_epoch{epoch:04d}.pt", model, cfg, step, log, out_dir)
            if callback is not None:
                callback(epoch, model, log)
                model.train()
    except NonFiniteLossError:
        log.wall_clock_s = time.perf_counter() - t0
        if out_dir is not None:
            log.write_jsonl(out_dir / "train_log.jsonl")
        raise

    log.wall_clock_s = time.perf_counter() - t0
    model.eval()
    if out_dir is not None:
        _checkpoint(out_dir / "model.pt", model, cfg, step, log, out_dir)
        log.write_jsonl(out_dir / "train_log.jsonl")
    return model, log


def _checkpoint(path, model, cfg, step, log, out_dir):
    meta = {"step": step, "seed": cfg.seed, "config": cfg.to_dict(), "config_hash": cfg.hash(), **log.meta}
    try:
        save_checkpoint(path, model, meta)
    except OSError as exc:
        log.write_jsonl(out_dir / "train_log.partial.jsonl")
        raise CheckpointError(f"failed to write checkpoint {path}: {exc}") from exc
