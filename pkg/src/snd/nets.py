"""The seven networks of the subject/background model and their forward paths."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import torch
from torch import nn

CHECKPOINT_FORMAT = "snd-checkpoint/1"
LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class ArchConfig:
    latent_dim: int = 32
    n_components: int = 3
    input_shape: tuple[int, int, int] = (3, 28, 28)
    conv_channels: tuple[int, ...] = (32, 64, 128)
    head_hidden: int = 32
    membership_hidden: int = 64
    variational_hidden: int = 64

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "conv_channels", tuple(int(v) for v in self.conv_channels))
        if self.latent_dim < 2:
            raise ConfigurationError("latent_dim must be >= 2")
        if self.n_components < 2:
            raise ConfigurationError("n_components (K) must be >= 2")
        if len(self.input_shape) != 3:
            raise ConfigurationError("input_shape must be (C, H, W)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(**{**d, "input_shape": tuple(d["input_shape"]), "conv_channels": tuple(d["conv_channels"])})


class LatentBundle(NamedTuple):
    z_f: torch.Tensor
    z_s: torch.Tensor
    z_b: torch.Tensor


class Reconstruction(NamedTuple):
    x_s: torch.Tensor
    x_b: torch.Tensor
    x_hat: torch.Tensor


def _conv_out(n: int) -> int:
    # kernel 3, stride 2, padding 1
    return (n - 1) // 2 + 1


def _mlp(d_in: int, hidden: int, d_out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(d_in, hidden), nn.LeakyReLU(0.1), nn.Linear(hidden, d_out))


class Encoder(nn.Module):
    def __init__(self, cfg: ArchConfig):
        super().__init__()
        c, h, w = cfg.input_shape
        layers, sizes = [], [(h, w)]
        for width in cfg.conv_channels:
            layers += [nn.Conv2d(c, width, 3, stride=2, padding=1), nn.LeakyReLU(0.1)]
            c = width
            h, w = _conv_out(h), _conv_out(w)
            sizes.append((h, w))
        self.conv = nn.Sequential(*layers)
        self.fc = nn.Linear(c * h * w, cfg.latent_dim)
        self.spatial_sizes = sizes

    def forward(self, x):
        return self.fc(self.conv(x).flatten(1))


class Decoder(nn.Module):
    """Mirror of :class:`Encoder` built from transposed convolutions, no output activation."""

    def __init__(self, cfg: ArchConfig, spatial_sizes):
        super().__init__()
        chans = list(cfg.conv_channels)
        self.start = (chans[-1],) + tuple(spatial_sizes[-1])
        self.fc = nn.Linear(cfg.latent_dim, chans[-1] * spatial_sizes[-1][0] * spatial_sizes[-1][1])
        outs = chans[-2::-1] + [cfg.input_shape[0]]
        layers = []
        c = chans[-1]
        for i, width in enumerate(outs):
            (h_in, w_in), (h_out, w_out) = spatial_sizes[-1 - i], spatial_sizes[-2 - i]
            pad = (h_out - (2 * h_in - 1), w_out - (2 * w_in - 1))
            layers.append(nn.ConvTranspose2d(c, width, 3, stride=2, padding=1, output_padding=pad))
            if i < len(outs) - 1:
                layers.append(nn.LeakyReLU(0.1))
            c = width
        self.deconv = nn.Sequential(*layers)

    def forward(self, z):
        h = torch.nn.functional.leaky_relu(self.fc(z), 0.1)
        return self.deconv(h.view(-1, *self.start))


class VariationalGaussian(nn.Module):
    """Diagonal Gaussian q(z_b | z_s): shared trunk, mean and clamped log-variance branches."""

    def __init__(self, latent_dim: int, hidden: int):
        super().__init__()
        self.trunk = nn.Sequential(nn.Linear(latent_dim, hidden), nn.LeakyReLU(0.1))
        self.mean = nn.Linear(hidden, latent_dim)
        self.logvar = nn.Linear(hidden, latent_dim)

    def forward(self, z_s):
        h = self.trunk(z_s)
        return self.mean(h), self.logvar(h).clamp(LOGVAR_MIN, LOGVAR_MAX)


class SNDNet(nn.Module):
    """Encoder, subject/background heads, membership net, variational net and two decoders.

    Parameter groups (see :meth:`param_groups`): ``theta_f`` encoder,
    ``theta_s``/``theta_b`` heads, ``theta_m`` variational net, ``theta_g``
    membership net, ``theta_s_prime``/``theta_b_prime`` decoders.
    """

    def __init__(self, cfg: ArchConfig | None = None):
        super().__init__()
        cfg = cfg or ArchConfig()
        self.cfg = cfg
        d = cfg.latent_dim
        self.encoder = Encoder(cfg)
        self.subject_head = _mlp(d, cfg.head_hidden, d)
        self.background_head = _mlp(d, cfg.head_hidden, d)
        self.variational = VariationalGaussian(d, cfg.variational_hidden)
        self.membership = _mlp(d, cfg.membership_hidden, cfg.n_components)
        self.subject_decoder = Decoder(cfg, self.encoder.spatial_sizes)
        self.background_decoder = Decoder(cfg, self.encoder.spatial_sizes)

    GROUPS = {
        "theta_f": "encoder",
        "theta_s": "subject_head",
        "theta_b": "background_head",
        "theta_m": "variational",
        "theta_g": "membership",
        "theta_s_prime": "subject_decoder",
        "theta_b_prime": "background_decoder",
    }

    def param_groups(self) -> dict[str, list[nn.Parameter]]:
        return {g: list(getattr(self, attr).parameters()) for g, attr in self.GROUPS.items()}

    def critic_parameters(self):
        return list(self.variational.parameters())

    def main_parameters(self):
        return [p for g, ps in self.param_groups().items() if g != "theta_m" for p in ps]

    def encoder_parameters(self):
        g = self.param_groups()
        return g["theta_f"] + g["theta_s"] + g["theta_b"]

    def _check_input(self, x):
        if tuple(x.shape[1:]) != self.cfg.input_shape:
            raise ConfigurationError(f"input shape {tuple(x.shape[1:])} != configured {self.cfg.input_shape}")

    def encode(self, x) -> LatentBundle:
        self._check_input(x)
        z_f = self.encoder(x)
        return LatentBundle(z_f, self.subject_head(z_f), self.background_head(z_f))

    def memberships(self, z_b):
        return torch.softmax(self.membership(z_b), dim=-1)

    def decode(self, z_s, z_b) -> Reconstruction:
        d = self.cfg.latent_dim
        if z_s.shape[-1] != d or z_b.shape[-1] != d:
            raise ConfigurationError(f"latent dims {z_s.shape[-1]}, {z_b.shape[-1]} != configured {d}")
        x_s = self.subject_decoder(z_s)
        x_b = self.background_decoder(z_b)
        return Reconstruction(x_s, x_b, x_s + x_b)

    def forward(self, x):
        bundle = self.encode(x)
        return bundle, self.decode(bundle.z_s, bundle.z_b)


@torch.no_grad()
def encode_array(model: SNDNet, images, batch_size: int = 512) -> LatentBundle:
    """Inference-mode encoding of a numpy/tensor image stack, returned as float64 numpy arrays."""
    model.eval()
    dtype = next(model.parameters()).dtype
    x = torch.as_tensor(images).to(dtype)
    parts = [model.encode(x[i : i + batch_size]) for i in range(0, len(x), batch_size)]
    if not parts:
        d = model.cfg.latent_dim
        empty = torch.zeros(0, d, dtype=torch.float64).numpy()
        return LatentBundle(empty, empty.copy(), empty.copy())
    return LatentBundle(*(torch.cat([getattr(p, f) for p in parts]).double().numpy() for f in LatentBundle._fields))


def save_checkpoint(path, model: SNDNet, metadata: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "arch": model.cfg.to_dict(),
        "state_dict": {k: v.detach().clone() for k, v in model.state_dict().items()},
        "metadata": metadata or {},
    }
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[SNDNet, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"{path}: unsupported checkpoint format {payload.get('format')!r}")
    model = SNDNet(ArchConfig.from_dict(payload["arch"]))
    first = next(iter(payload["state_dict"].values()))
    model.to(first.dtype)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload["metadata"]
