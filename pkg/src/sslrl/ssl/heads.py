"""Trainable SSL heads and the per-batch computation of every registered loss."""
from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import TYPE_CHECKING, Literal

import numpy as np
import torch
import torch.nn as nn

from ..agent import PixelEncoder, ResidualBlock, ema_update, weight_init
from ..config import ConfigError
from . import losses as L
from .registry import CONTEXT, MOMENTUM_LOSSES, check_loss_name, context_spec

if TYPE_CHECKING:
    from ..agent import SacAgent


@dataclass(frozen=True)
class SslHeadConfig:
    proj_hidden: int = 256
    proj_out: int = 128
    mlp_hidden: int = 1024
    curl_mode: Literal["bilinear", "dot_temperature"] = "bilinear"
    temperature: float = 0.1
    student_temperature: float = 0.1
    teacher_temperature: float = 0.04
    center_momentum: float = 0.9
    mask_ratio: float = 0.5
    patch_size: int = 4
    momentum_tau: float = 0.05
    lambda_z: float = 1e-6
    lambda_theta: float = 1e-7
    separation: Literal["A", "B"] = "A"

    def __post_init__(self):
        for name in ("proj_hidden", "proj_out", "mlp_hidden", "patch_size"):
            if getattr(self, name) <= 0:
                raise ConfigError("must be positive", f"ssl.{name}")
        for name in ("temperature", "student_temperature", "teacher_temperature"):
            if getattr(self, name) <= 0:
                raise ConfigError("temperature must be positive", f"ssl.{name}")
        if not 0 < self.mask_ratio < 1:
            raise ConfigError("mask_ratio must lie in (0, 1)", "ssl.mask_ratio")
        if self.curl_mode not in ("bilinear", "dot_temperature"):
            raise ConfigError(f"unknown curl mode {self.curl_mode!r}", "ssl.curl_mode")
        if self.separation not in ("A", "B"):
            raise ConfigError("separation must be A or B", "ssl.separation")


@dataclass
class SslBatch:
    """Float NCHW views plus the transition's action and reward."""

    s_a: torch.Tensor
    s_a_next: torch.Tensor
    s_p: torch.Tensor
    s_p_next: torch.Tensor
    action: torch.Tensor
    reward: torch.Tensor


def two_layer(in_dim: int, hidden: int, out_dim: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(in_dim, hidden), nn.ReLU(), nn.Linear(hidden, out_dim))


class PixelDecoder(nn.Module):
    """Fully connected layer followed by transposed convs mirroring the encoder."""

    def __init__(self, encoder: PixelEncoder):
        super().__init__()
        cfg = encoder.cfg
        self.conv_shape = encoder.conv_shape
        self.fc = nn.Linear(cfg.repr_dim, encoder.conv_dim)
        self.res_block = ResidualBlock(cfg.filters) if cfg.backbone == "residual_tail" else None
        geometry = cfg.geometry()[: len(encoder.convs)]
        deconvs = []
        for i, (k, s) in enumerate(reversed(geometry)):
            out_c = encoder.in_channels if i == len(geometry) - 1 else cfg.filters
            deconvs.append(nn.ConvTranspose2d(cfg.filters, out_c, k, stride=s))
        self.deconvs = nn.ModuleList(deconvs)
        self.apply(weight_init)

    def forward(self, z):
        x = torch.relu(self.fc(z)).view(-1, *self.conv_shape)
        if self.res_block is not None:
            x = self.res_block(x)
        for i, deconv in enumerate(self.deconvs):
            x = deconv(x)
            if i < len(self.deconvs) - 1:
                x = torch.relu(x)
        return x


class ContextHead(nn.Module):
    """Shared hidden layer with one output layer per predicted component."""

    def __init__(self, in_dim: int, hidden: int, out_dims: dict[str, int]):
        super().__init__()
        self.trunk = nn.Sequential(nn.Linear(in_dim, hidden), nn.ReLU())
        self.out = nn.ModuleDict({name: nn.Linear(hidden, d) for name, d in out_dims.items()})
        self.apply(weight_init)

    def forward(self, x) -> dict[str, torch.Tensor]:
        h = self.trunk(x)
        return {name: layer(h) for name, layer in self.out.items()}


def _frozen_copy(module: nn.Module) -> nn.Module:
    target = copy.deepcopy(module)
    for p in target.parameters():
        p.requires_grad_(False)
    return target


class SslHeads(nn.Module):
    """All heads needed for a set of losses, attached to a :class:`SacAgent`.

    The agent is referenced, not registered, so ``parameters()`` only yields
    head parameters. Momentum copies are stored with ``requires_grad=False``
    and only move through :meth:`momentum_update`.
    """

    def __init__(self, agent: "SacAgent", names, cfg: SslHeadConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or SslHeadConfig()
        self.names = tuple(names)
        for name in self.names:
            check_loss_name(name)
        self._agent = [agent]  # list keeps the agent out of module registration
        enc = agent.encoder
        a_dim = agent.action_dim

        if cfg.separation == "B":
            self.ssl_fc = nn.Sequential(nn.Linear(enc.conv_dim, enc.cfg.repr_dim), nn.LayerNorm(enc.cfg.repr_dim))
            self.ssl_fc_target = _frozen_copy(self.ssl_fc)
            d = enc.cfg.repr_dim
        else:
            d = enc.out_dim
        self.feature_dim = d

        bilinear_dims = {"curl": d, "curl_w_action": d + a_dim, "curl_w_critic": d + 2}
        self.W = nn.ParameterDict({n: nn.Parameter(torch.rand(k, k))
                                   for n, k in bilinear_dims.items() if n in self.names})
        if "byol" in self.names:
            self.byol_proj = two_layer(d, cfg.proj_hidden, cfg.proj_out)
            self.byol_pred = two_layer(cfg.proj_out, cfg.proj_hidden, cfg.proj_out)
            self.byol_proj_target = _frozen_copy(self.byol_proj)
        if "simsiam" in self.names:
            self.simsiam_proj = two_layer(d, cfg.proj_hidden, cfg.proj_out)
            self.simsiam_pred = two_layer(cfg.proj_out, cfg.proj_hidden, cfg.proj_out)
        if "dino" in self.names:
            self.dino_proj = two_layer(d, cfg.proj_hidden, cfg.proj_out)
            self.dino_proj_target = _frozen_copy(self.dino_proj)
            self.register_buffer("dino_center", torch.zeros(cfg.proj_out))
        if "rotation_cls" in self.names:
            self.rotation_cls = two_layer(d, cfg.mlp_hidden, 4)
        if "shuffle_cls" in self.names:
            self.shuffle_cls = two_layer(2 * d + a_dim, cfg.mlp_hidden, 1)
        if "ae" in self.names:
            self.ae_decoder = PixelDecoder(enc)
        if "mae" in self.names:
            self.mae_decoder = PixelDecoder(enc)
            L.masked_patch_count(enc.image_size, cfg.patch_size, cfg.mask_ratio)

        role_dims = {"repr_next": d, "action": a_dim, "reward": 1}
        self.context = nn.ModuleDict()
        for name in self.names:
            if name not in CONTEXT:
                continue
            spec, _ = context_spec(name)
            self.context[name] = ContextHead(d + role_dims[spec.second_input], cfg.mlp_hidden,
                                             {o: role_dims[o] for o in spec.outputs})
        self.apply(weight_init)
        for online, target in self.momentum_modules():
            target.load_state_dict(online.state_dict())

    @property
    def agent(self) -> "SacAgent":
        return self._agent[0]

    def trainable_parameters(self) -> list[nn.Parameter]:
        return [p for p in self.parameters() if p.requires_grad]

    def momentum_modules(self) -> list[tuple[nn.Module, nn.Module]]:
        pairs = []
        for n in ("ssl_fc", "byol_proj", "dino_proj"):
            if hasattr(self, n):
                pairs.append((getattr(self, n), getattr(self, n + "_target")))
        return pairs

    def momentum_update(self) -> None:
        for online, target in self.momentum_modules():
            ema_update(online, target, self.cfg.momentum_tau)

    # representations -------------------------------------------------------
    def online_repr(self, x):
        enc = self.agent.encoder
        if self.cfg.separation == "B":
            return self.ssl_fc(enc.conv_features(x))
        return enc(x)

    @torch.no_grad()
    def target_repr(self, x):
        enc = self.agent.target_encoder
        if self.cfg.separation == "B":
            return self.ssl_fc_target(enc.conv_features(x))
        return enc(x)

    def latent(self, x):
        enc = self.agent.encoder
        if self.cfg.separation == "B":
            return self.ssl_fc(enc.conv_features(x))
        return enc(x, pre_tanh=True)

    # losses ----------------------------------------------------------------
    def compute(self, batch: SslBatch, rng: np.random.Generator, names=None) -> dict[str, torch.Tensor]:
        names = self.names if names is None else tuple(names)
        cache: dict[tuple[str, str], torch.Tensor] = {}

        def on(view):
            if ("on", view) not in cache:
                cache["on", view] = self.online_repr(getattr(batch, view))
            return cache["on", view]

        def tg(view):
            if ("tg", view) not in cache:
                cache["tg", view] = self.target_repr(getattr(batch, view))
            return cache["tg", view]

        out = {}
        for name in names:
            if name not in self.names:
                raise ConfigError(f"no head built for loss {name!r}")
            out[name] = self._loss(name, batch, rng, on, tg)
        return out

    def _loss(self, name, batch, rng, on, tg):
        cfg = self.cfg
        agent = self.agent
        curl_kw = dict(mode=cfg.curl_mode, tau=cfg.temperature)
        if name == "curl":
            return L.info_nce(on("s_a"), tg("s_p"), W=self.W[name], **curl_kw)
        if name in ("curl_w_action", "curl_w_critic"):
            h_q = agent.encoder(batch.s_a)
            with torch.no_grad():
                h_k = agent.target_encoder(batch.s_p)
            if name == "curl_w_action":
                extra_q = agent.actor(h_q, compute_pi=False)[0]
                with torch.no_grad():
                    extra_k = agent.actor(h_k, compute_pi=False)[0]
            else:
                extra_q = torch.cat(agent.critic(h_q, batch.action), dim=-1)
                with torch.no_grad():
                    extra_k = torch.cat(agent.critic(h_k, batch.action), dim=-1)
            return L.curl_conditioned(on("s_a"), tg("s_p"), extra_q, extra_k, W=self.W[name], **curl_kw)
        if name == "byol":
            p1 = self.byol_pred(self.byol_proj(on("s_a")))
            p1_swap = self.byol_pred(self.byol_proj(on("s_p")))
            with torch.no_grad():
                z2 = self.byol_proj_target(tg("s_p"))
                z2_swap = self.byol_proj_target(tg("s_a"))
            return L.byol_loss(p1, z2, p1_swap, z2_swap)
        if name == "simsiam":
            z = self.simsiam_proj(on("s_a"))
            z_swap = self.simsiam_proj(on("s_p"))
            return L.simsiam_loss(self.simsiam_pred(z), self.simsiam_pred(z_swap), z, z_swap)
        if name == "dino":
            s1, s2 = self.dino_proj(on("s_a")), self.dino_proj(on("s_p"))
            with torch.no_grad():
                t1, t2 = self.dino_proj_target(tg("s_a")), self.dino_proj_target(tg("s_p"))
            loss, center = L.dino_loss(s1, s2, t1, t2, self.dino_center, cfg.student_temperature,
                                       cfg.teacher_temperature, cfg.center_momentum)
            self.dino_center.copy_(center)
            return loss
        if name == "rotation_cls":
            n = batch.s_a.shape[0]
            labels = rng.integers(0, 4, size=n)
            rotated = L.rotate_images(batch.s_a, labels)
            return L.rotation_cls_loss(self.rotation_cls(self.online_repr(rotated)), labels)
        if name == "shuffle_cls":
            n = batch.s_a.shape[0]
            swap = rng.random(n) < 0.5
            x1, x2 = L.shuffle_pairs(batch.s_a, batch.s_a_next, swap)
            logits = self.shuffle_cls(torch.cat([self.online_repr(x1), self.online_repr(x2), batch.action], -1))
            return L.shuffle_cls_loss(logits, swap.astype(np.float64))
        if name == "ae":
            z = self.latent(batch.s_a)
            return L.ae_loss(self.ae_decoder(z), batch.s_a, z, self.ae_decoder.parameters(),
                             cfg.lambda_z, cfg.lambda_theta)
        if name == "mae":
            n, _, size, _ = batch.s_a.shape
            mask = L.sample_patch_mask(n, size, cfg.patch_size, cfg.mask_ratio, rng)
            z = self.latent(L.apply_patch_mask(batch.s_a, mask))
            return L.mae_loss(self.mae_decoder(z), batch.s_a, mask, z, self.mae_decoder.parameters(),
                              cfg.lambda_z, cfg.lambda_theta)
        spec, balanced = context_spec(name)
        second = {"repr_next": lambda: on("s_a_next"), "action": lambda: batch.action,
                  "reward": lambda: batch.reward}[spec.second_input]()
        preds = self.context[name](torch.cat([on("s_a"), second], dim=-1))
        targets = {"action": batch.action, "reward": batch.reward}
        if "repr_next" in spec.outputs:
            targets["repr_next"] = tg("s_p_next")
        return L.context_loss(spec.outputs, preds, targets, balanced=balanced)


def needs_momentum(names) -> bool:
    return any(n in MOMENTUM_LOSSES for n in names)
