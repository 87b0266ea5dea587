"""Soft actor-critic over a convolutional pixel encoder.

Network layout follows the CURL/SAC+AE family: an online encoder ``f_q``
shared by the critics (the actor reads a detached copy of its output), a
target encoder ``f_k`` and target critics kept as exponential moving averages.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

CHECKPOINT_FORMAT = "sslrl-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    """A loss became NaN or infinite."""


@dataclass(frozen=True)
class EncoderConfig:
    conv_layers: int = 4
    filters: int = 32
    fc_layers: int = 1
    repr_dim: int = 50
    tanh_out: bool = False
    extra_linear: int = 0
    backbone: Literal["plain", "residual_tail"] = "plain"
    # per-layer conv geometry; None means 3x3 kernels, stride 2 then stride 1
    kernel_sizes: tuple[int, ...] | None = None
    strides: tuple[int, ...] | None = None
    extra_dim: int = 128

    def __post_init__(self):
        if self.repr_dim <= 0:
            raise ValueError("repr_dim must be positive")
        if self.conv_layers < 2:
            raise ValueError("conv_layers must be >= 2")
        if self.fc_layers < 1:
            raise ValueError("fc_layers must be >= 1")
        if self.backbone not in ("plain", "residual_tail"):
            raise ValueError(f"unknown backbone {self.backbone!r}")
        for name in ("kernel_sizes", "strides"):
            value = getattr(self, name)
            if value is not None and len(value) != self.conv_layers:
                raise ValueError(f"{name} must have {self.conv_layers} entries")

    def geometry(self) -> list[tuple[int, int]]:
        kernels = self.kernel_sizes or (3,) * self.conv_layers
        strides = self.strides or (2,) + (1,) * (self.conv_layers - 1)
        return list(zip(kernels, strides))

    @classmethod
    def desk(cls, **overrides) -> "EncoderConfig":
        """Lighter conv stack for single-core CPU runs (4x4/4 stem, then 3x3 convs, 16 filters)."""
        base = dict(filters=16, kernel_sizes=(4, 3, 3, 3), strides=(4, 2, 1, 1))
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class AgentConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    hidden_dim: int = 1024
    discount: float = 0.99
    init_temperature: float = 0.1
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    alpha_lr: float = 1e-4
    alpha_betas: tuple[float, float] = (0.5, 0.999)
    actor_update_freq: int = 2
    critic_target_update_freq: int = 2
    critic_tau: float = 0.01
    encoder_tau: float = 0.05
    log_std_min: float = -10.0
    log_std_max: float = 2.0

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def weight_init(module: nn.Module) -> None:
    if isinstance(module, (nn.Linear, nn.Conv2d, nn.ConvTranspose2d)):
        nn.init.orthogonal_(module.weight)
        if module.bias is not None:
            nn.init.zeros_(module.bias)


def mlp(in_dim: int, hidden: int, out_dim: int, layers: int = 3) -> nn.Sequential:
    mods: list[nn.Module] = []
    d = in_dim
    for _ in range(layers - 1):
        mods += [nn.Linear(d, hidden), nn.ReLU()]
        d = hidden
    mods.append(nn.Linear(d, out_dim))
    return nn.Sequential(*mods)


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        h = F.relu(self.conv1(x))
        return F.relu(x + self.conv2(h))


class PixelEncoder(nn.Module):
    """Conv trunk + fully connected projection + LayerNorm (+ optional tanh)."""

    def __init__(self, in_channels: int, cfg: EncoderConfig, image_size: int = 84):
        super().__init__()
        self.cfg = cfg
        self.in_channels = in_channels
        self.image_size = image_size
        geometry = cfg.geometry()
        n_plain = cfg.conv_layers - 2 if cfg.backbone == "residual_tail" else cfg.conv_layers
        convs: list[nn.Module] = []
        c = in_channels
        for k, s in geometry[:n_plain]:
            convs.append(nn.Conv2d(c, cfg.filters, k, stride=s))
            c = cfg.filters
        self.convs = nn.ModuleList(convs)
        self.res_block = ResidualBlock(cfg.filters) if cfg.backbone == "residual_tail" else None

        with torch.no_grad():
            probe = self._conv_forward(torch.zeros(1, in_channels, image_size, image_size))
        self.conv_shape = tuple(probe.shape[1:])
        self.conv_dim = int(np.prod(self.conv_shape))

        fcs: list[nn.Module] = [nn.Linear(self.conv_dim, cfg.repr_dim)]
        for _ in range(cfg.fc_layers - 1):
            fcs += [nn.ReLU(), nn.Linear(cfg.repr_dim, cfg.repr_dim)]
        self.fc = nn.Sequential(*fcs)
        self.ln = nn.LayerNorm(cfg.repr_dim)
        extra: list[nn.Module] = []
        d = cfg.repr_dim
        for _ in range(cfg.extra_linear):
            extra += [nn.Linear(d, cfg.extra_dim), nn.ReLU()]
            d = cfg.extra_dim
        self.extra = nn.Sequential(*extra)
        self.out_dim = d
        self.apply(weight_init)

    def _conv_forward(self, x):
        for conv in self.convs:
            x = F.relu(conv(x))
        if self.res_block is not None:
            x = self.res_block(x)
        return x

    def conv_features(self, obs: torch.Tensor) -> torch.Tensor:
        if obs.dim() != 4 or obs.shape[1:] != (self.in_channels, self.image_size, self.image_size):
            raise ValueError(
                f"encoder expects (N, {self.in_channels}, {self.image_size}, {self.image_size}),"
                f" got {tuple(obs.shape)}")
        return self._conv_forward(obs).flatten(1)

    def head(self, h: torch.Tensor, pre_tanh: bool = False) -> torch.Tensor:
        z = self.ln(self.fc(h))
        if pre_tanh:
            return z
        if self.cfg.tanh_out:
            z = torch.tanh(z)
        return self.extra(z)

    def forward(self, obs: torch.Tensor, detach: bool = False, pre_tanh: bool = False) -> torch.Tensor:
        h = self.conv_features(obs)
        if detach:
            h = h.detach()
        return self.head(h, pre_tanh=pre_tanh)


class Actor(nn.Module):
    """Tanh-squashed Gaussian policy head over encoder representations."""

    def __init__(self, repr_dim, action_dim, hidden_dim, log_std_min=-10.0, log_std_max=2.0):
        super().__init__()
        self.trunk = mlp(repr_dim, hidden_dim, 2 * action_dim)
        self.log_std_min = log_std_min
        self.log_std_max = log_std_max
        self.apply(weight_init)

    def forward(self, h, compute_pi=True, generator: torch.Generator | None = None):
        mu, log_std = self.trunk(h).chunk(2, dim=-1)
        log_std = torch.tanh(log_std)
        log_std = self.log_std_min + 0.5 * (self.log_std_max - self.log_std_min) * (log_std + 1)
        if not compute_pi:
            return torch.tanh(mu), None, None, log_std
        std = log_std.exp()
        noise = torch.randn(mu.shape, generator=generator, dtype=mu.dtype, device=mu.device)
        pi = mu + noise * std
        log_pi = (-0.5 * noise.pow(2) - log_std).sum(-1, keepdim=True)
        log_pi = log_pi - 0.5 * math.log(2 * math.pi) * noise.size(-1)
        mu, pi = torch.tanh(mu), torch.tanh(pi)
        log_pi = log_pi - torch.log(F.relu(1 - pi.pow(2)) + 1e-6).sum(-1, keepdim=True)
        return mu, pi, log_pi, log_std


class Critic(nn.Module):
    """Two Q heads over (representation, action)."""

    def __init__(self, repr_dim, action_dim, hidden_dim):
        super().__init__()
        self.q1 = mlp(repr_dim + action_dim, hidden_dim, 1)
        self.q2 = mlp(repr_dim + action_dim, hidden_dim, 1)
        self.apply(weight_init)

    def forward(self, h, action):
        ha = torch.cat([h, action], dim=-1)
        return self.q1(ha), self.q2(ha)


def ema_update(online: nn.Module, target: nn.Module, tau: float) -> None:
    """``target := tau * online + (1 - tau) * target`` for every parameter."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    with torch.no_grad():
        for p, tp in zip(online.parameters(), target.parameters()):
            tp.mul_(1.0 - tau).add_(p, alpha=tau)


def soft_bellman_target(reward, not_done, discount, target_q1, target_q2, log_pi, alpha):
    """``r + gamma * not_done * (min(Q1', Q2') - alpha * log_pi)``."""
    target_v = torch.min(target_q1, target_q2) - alpha * log_pi
    return reward + not_done * discount * target_v


def obs_to_tensor(obs: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """uint8 ``(N, H, W, C)`` -> float ``(N, C, H, W)`` in [0, 1]."""
    t = torch.from_numpy(np.ascontiguousarray(obs)).permute(0, 3, 1, 2)
    return t.to(dtype).div_(255.0)


def _check_finite(**losses) -> None:
    for name, value in losses.items():
        if value is not None and not torch.isfinite(value).all():
            raise TrainingDivergedError(f"{name} became {value.item()}")


class SacAgent:
    """SAC state: online/target encoders and critics, actor head, temperature."""

    def __init__(self, obs_channels: int, action_dim: int, cfg: AgentConfig | None = None,
                 image_size: int = 84):
        self.cfg = cfg = cfg or AgentConfig()
        self.obs_channels = obs_channels
        self.action_dim = action_dim
        self.image_size = image_size
        self.encoder = PixelEncoder(obs_channels, cfg.encoder, image_size)
        d = self.encoder.out_dim
        self.actor = Actor(d, action_dim, cfg.hidden_dim, cfg.log_std_min, cfg.log_std_max)
        self.critic = Critic(d, action_dim, cfg.hidden_dim)
        self.target_encoder = copy.deepcopy(self.encoder)
        self.critic_target = copy.deepcopy(self.critic)
        for p in list(self.target_encoder.parameters()) + list(self.critic_target.parameters()):
            p.requires_grad_(False)
        self.log_alpha = torch.tensor(math.log(cfg.init_temperature), requires_grad=True)
        self.target_entropy = -float(action_dim)
        self.update_count = 0
        self.build_optimizers()

    def build_optimizers(self) -> None:
        cfg = self.cfg
        self.critic_optimizer = torch.optim.Adam(
            list(self.encoder.parameters()) + list(self.critic.parameters()), lr=cfg.lr, betas=cfg.betas)
        self.actor_optimizer = torch.optim.Adam(self.actor.parameters(), lr=cfg.lr, betas=cfg.betas)
        self.alpha_optimizer = torch.optim.Adam([self.log_alpha], lr=cfg.alpha_lr, betas=cfg.alpha_betas)

    @property
    def dtype(self) -> torch.dtype:
        return self.log_alpha.dtype

    @property
    def alpha(self) -> torch.Tensor:
        return self.log_alpha.exp()

    def modules(self) -> dict[str, nn.Module]:
        return {"encoder": self.encoder, "target_encoder": self.target_encoder, "actor": self.actor,
                "critic": self.critic, "critic_target": self.critic_target}

    def to(self, dtype: torch.dtype) -> "SacAgent":
        for m in self.modules().values():
            m.to(dtype)
        self.log_alpha = self.log_alpha.detach().to(dtype).requires_grad_(True)
        self.build_optimizers()
        return self

    def online_parameters(self) -> list[nn.Parameter]:
        return (list(self.encoder.parameters()) + list(self.critic.parameters())
                + list(self.actor.parameters()))

    def to_tensor(self, obs: np.ndarray) -> torch.Tensor:
        return obs_to_tensor(obs, self.dtype)

    def encode(self, obs: torch.Tensor, which: Literal["online", "target"] = "online") -> torch.Tensor:
        if which == "online":
            return self.encoder(obs)
        if which == "target":
            with torch.no_grad():
                return self.target_encoder(obs)
        raise ValueError(f"unknown encoder {which!r}")

    @torch.no_grad()
    def act(self, obs: np.ndarray, deterministic: bool = True) -> np.ndarray:
        """Actions for a uint8 batch ``(N, H, W, C)`` already at the encoder's input size."""
        h = self.encoder(self.to_tensor(obs))
        mu, pi, _, _ = self.actor(h, compute_pi=not deterministic)
        out = mu if deterministic else pi
        return out.cpu().numpy().astype(np.float32)

    def td_target(self, reward, not_done, next_obs) -> torch.Tensor:
        with torch.no_grad():
            _, next_pi, next_log_pi, _ = self.actor(self.encoder(next_obs))
            tq1, tq2 = self.critic_target(self.target_encoder(next_obs), next_pi)
            return soft_bellman_target(reward, not_done, self.cfg.discount, tq1, tq2,
                                       next_log_pi, self.alpha.detach())

    def critic_loss(self, obs, action, reward, next_obs, not_done) -> torch.Tensor:
        y = self.td_target(reward, not_done, next_obs)
        q1, q2 = self.critic(self.encoder(obs), action)
        return F.mse_loss(q1, y) + F.mse_loss(q2, y)

    def actor_and_alpha_loss(self, obs) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Actor loss on detached encoder features; critic weights are held fixed."""
        h = self.encoder(obs, detach=True).detach()
        _, pi, log_pi, _ = self.actor(h)
        critic_params = list(self.critic.parameters())
        flags = [p.requires_grad for p in critic_params]
        for p in critic_params:
            p.requires_grad_(False)
        try:
            q1, q2 = self.critic(h, pi)
        finally:
            for p, flag in zip(critic_params, flags):
                p.requires_grad_(flag)
        actor_loss = (self.alpha.detach() * log_pi - torch.min(q1, q2)).mean()
        alpha_loss = (self.alpha * (-log_pi - self.target_entropy).detach()).mean()
        return actor_loss, alpha_loss, -log_pi.mean()

    def sac_update(self, obs, action, reward, next_obs, not_done) -> dict[str, float]:
        """One critic step, plus actor/alpha steps every ``actor_update_freq`` calls."""
        report: dict[str, float] = {}
        critic_loss = self.critic_loss(obs, action, reward, next_obs, not_done)
        _check_finite(critic_loss=critic_loss)
        self.critic_optimizer.zero_grad(set_to_none=True)
        critic_loss.backward()
        self.critic_optimizer.step()
        report["critic_loss"] = critic_loss.item()

        if self.update_count % self.cfg.actor_update_freq == 0:
            actor_loss, alpha_loss, entropy = self.actor_and_alpha_loss(obs)
            _check_finite(actor_loss=actor_loss, alpha_loss=alpha_loss)
            self.actor_optimizer.zero_grad(set_to_none=True)
            actor_loss.backward()
            self.actor_optimizer.step()
            self.alpha_optimizer.zero_grad(set_to_none=True)
            alpha_loss.backward()
            self.alpha_optimizer.step()
            report.update(actor_loss=actor_loss.item(), alpha_loss=alpha_loss.item(),
                          entropy=entropy.item(), alpha=self.alpha.item())
        self.update_count += 1
        return report

    def update_targets(self) -> None:
        ema_update(self.critic, self.critic_target, self.cfg.critic_tau)
        ema_update(self.encoder, self.target_encoder, self.cfg.encoder_tau)

    def maybe_update_targets(self) -> bool:
        """EMA step on calls where the (already incremented) counter hits the target frequency."""
        if (self.update_count - 1) % self.cfg.critic_target_update_freq == 0:
            self.update_targets()
            return True
        return False

    @torch.no_grad()
    def state_value(self, h: torch.Tensor) -> torch.Tensor:
        """``min(Q1, Q2)`` at the deterministic policy action."""
        mu, _, _, _ = self.actor(h, compute_pi=False)
        q1, q2 = self.critic(h, mu)
        return torch.min(q1, q2).squeeze(-1)

    def state_dict(self) -> dict:
        state = {name: m.state_dict() for name, m in self.modules().items()}
        state["log_alpha"] = self.log_alpha.detach().clone()
        state["update_count"] = self.update_count
        return state

    def load_state_dict(self, state: dict) -> None:
        for name, m in self.modules().items():
            m.load_state_dict(state[name])
        with torch.no_grad():
            self.log_alpha.copy_(state["log_alpha"])
        self.update_count = int(state["update_count"])


def parameter_checksum(*modules: nn.Module) -> str:
    h = hashlib.sha256()
    for m in modules:
        for name, t in m.state_dict().items():
            h.update(name.encode())
            h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(path, modules: dict[str, nn.Module], config_hash: str, extra: dict | None = None) -> None:
    blob = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config_hash": config_hash,
        "modules": {name: m.state_dict() for name, m in modules.items()},
        "extra": extra or {},
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(blob, path)


def load_checkpoint(path, expected_hash: str | None = None) -> dict:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not an sslrl checkpoint")
    if blob["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob['version']}")
    if expected_hash is not None and blob["config_hash"] != expected_hash:
        raise ValueError(f"checkpoint config hash {blob['config_hash']} != {expected_hash}")
    return blob
