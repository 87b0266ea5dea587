"""Data collection, replay, joint SAC+SSL updates and whole training runs."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Literal

import numpy as np
import torch

from .agent import AgentConfig, EncoderConfig, SacAgent, TrainingDivergedError, ema_update, save_checkpoint
from .augment import AugmentationSpec, center_crop, make_branch_views
from .config import ConfigError
from .env import EnvSpec, make_env
from .ssl import SslBatch, SslHeadConfig, SslHeads
from .ssl.losses import combo_loss
from .ssl.registry import LossCombo

log = logging.getLogger(__name__)

REPLAY_FORMAT_VERSION = 1
RESULT_FIELDS = ("agent_name", "env", "seed", "env_step", "eval_return", "status")
EVAL_SEED_BASE = 1_000_003

Regime = Literal["alternating", "summed", "pretrain_then_rl"]


@dataclass(frozen=True)
class TrainConfig:
    env: EnvSpec = field(default_factory=EnvSpec)
    agent: AgentConfig = field(default_factory=AgentConfig)
    aug1: AugmentationSpec = field(default_factory=AugmentationSpec)
    aug2: AugmentationSpec = field(default_factory=AugmentationSpec)
    losses: LossCombo = field(default_factory=LossCombo)
    ssl: SslHeadConfig = field(default_factory=SslHeadConfig)
    regime: Regime = "alternating"
    total_env_steps: int = 30_000
    init_explore_steps: int = 1000
    batch_size: int = 128
    buffer_capacity: int = 100_000
    eval_every: int = 1000
    eval_episodes: int = 10
    ssl_lr: float = 1e-3
    w_ssl: float = 1.0
    pretrain_steps: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.regime not in ("alternating", "summed", "pretrain_then_rl"):
            raise ConfigError(f"unknown regime {self.regime!r}", "train.regime")
        if self.init_explore_steps > self.total_env_steps:
            raise ConfigError("init_explore_steps exceeds total_env_steps", "train.init_explore_steps")
        if self.batch_size > self.buffer_capacity:
            raise ConfigError("batch_size exceeds buffer_capacity", "train.batch_size")
        if self.batch_size < 1 or self.eval_every < 1 or self.eval_episodes < 1:
            raise ConfigError("batch_size, eval_every and eval_episodes must be positive")
        if self.aug1.out != self.aug2.out:
            raise ConfigError("both branches must produce the same output size", "aug.out")
        if self.env.obs_render_size < self.aug1.out:
            raise ConfigError("render size smaller than the encoder input", "env.obs_render_size")

    @property
    def image_size(self) -> int:
        return self.aug1.out

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def apply_combo(cfg: TrainConfig, combo: LossCombo) -> TrainConfig:
    """Config with the combo's weights and its magnitudes on both augmentation branches."""
    return replace(cfg, losses=combo, aug1=replace(cfg.aug1, m=combo.m1), aug2=replace(cfg.aug2, m=combo.m2))


def desk_config(**overrides) -> TrainConfig:
    """Single-core CPU defaults: one RGB frame, lighter encoder and 256-wide heads."""
    base = dict(
        env=EnvSpec(frame_stack=1),
        agent=AgentConfig(encoder=EncoderConfig.desk(), hidden_dim=256),
        ssl=SslHeadConfig(mlp_hidden=256),
        total_env_steps=30_000, batch_size=128, eval_every=1000, eval_episodes=10,
    )
    base.update(overrides)
    return TrainConfig(**base)


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions stored as uint8 frames."""

    def __init__(self, capacity: int, obs_shape: tuple[int, ...], action_dim: int, state_dim: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.obs = np.empty((capacity, *obs_shape), dtype=np.uint8)
        self.next_obs = np.empty((capacity, *obs_shape), dtype=np.uint8)
        self.actions = np.empty((capacity, action_dim), dtype=np.float32)
        self.rewards = np.empty((capacity, 1), dtype=np.float32)
        self.not_dones = np.empty((capacity, 1), dtype=np.float32)
        self.states = np.empty((capacity, state_dim), dtype=np.float32)
        self.next_states = np.empty((capacity, state_dim), dtype=np.float32)
        self.idx = 0
        self.full = False

    def __len__(self) -> int:
        return self.capacity if self.full else self.idx

    def add(self, obs, action, reward, next_obs, done, state=None, next_state=None) -> None:
        i = self.idx
        self.obs[i] = obs
        self.next_obs[i] = next_obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.not_dones[i] = 0.0 if done else 1.0
        if self.states.shape[1]:
            self.states[i] = state
            self.next_states[i] = next_state
        self.idx = (i + 1) % self.capacity
        self.full = self.full or self.idx == 0

    def sample_idxs(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if len(self) == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        return rng.integers(0, len(self), size=batch_size)

    def ordered(self) -> np.ndarray:
        """Indices from oldest to newest."""
        if not self.full:
            return np.arange(self.idx)
        return (np.arange(self.capacity) + self.idx) % self.capacity

    def save(self, path, env_hash: str) -> None:
        order = self.ordered()
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            np.savez_compressed(
                fh, version=np.array(REPLAY_FORMAT_VERSION), env_hash=np.array(env_hash),
                capacity=np.array(self.capacity), obs=self.obs[order], next_obs=self.next_obs[order],
                actions=self.actions[order], rewards=self.rewards[order],
                not_dones=self.not_dones[order], states=self.states[order],
                next_states=self.next_states[order])

    @classmethod
    def load(cls, path, expected_env_hash: str | None = None) -> "ReplayBuffer":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"replay snapshot {path} not found")
        with np.load(path) as z:
            if int(z["version"]) != REPLAY_FORMAT_VERSION:
                raise ValueError(f"unsupported replay snapshot version {int(z['version'])}")
            if expected_env_hash is not None and str(z["env_hash"]) != expected_env_hash:
                raise ValueError(f"snapshot env hash {z['env_hash']} != {expected_env_hash}")
            n = len(z["actions"])
            buf = cls(max(int(z["capacity"]), 1), z["obs"].shape[1:], z["actions"].shape[1],
                      z["states"].shape[1])
            for name in ("obs", "next_obs", "actions", "rewards", "not_dones", "states", "next_states"):
                getattr(buf, name)[:n] = z[name]
        buf.idx = n % buf.capacity
        buf.full = n == buf.capacity
        return buf


def sample(buffer: ReplayBuffer, batch_size: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform draw with replacement from the filled region."""
    idx = buffer.sample_idxs(batch_size, rng)
    return {
        "obs": buffer.obs[idx], "next_obs": buffer.next_obs[idx], "action": buffer.actions[idx],
        "reward": buffer.rewards[idx], "not_done": buffer.not_dones[idx],
    }


@dataclass
class RunResult:
    seed: int
    steps: list[int] = field(default_factory=list)
    returns: list[float] = field(default_factory=list)
    final_score: float = float("nan")
    failed: bool = False
    error: str | None = None
    updates: int = 0

    def record(self, step: int, value: float) -> None:
        if self.steps and step <= self.steps[-1]:
            raise ValueError("evaluation steps must be strictly increasing")
        self.steps.append(step)
        self.returns.append(value)
        self.final_score = value

    def rows(self, agent_name: str, env: str) -> list[dict]:
        status = "failed" if self.failed else "ok"
        return [dict(agent_name=agent_name, env=env, seed=self.seed, env_step=s, eval_return=_fmt(r),
                     status=status) for s, r in zip(self.steps, self.returns)]


def _fmt(x: float) -> str:
    return repr(float(x))


def write_results_csv(path, rows: list[dict]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def read_results_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["seed"] = int(row["seed"])
        row["env_step"] = int(row["env_step"])
        row["eval_return"] = float(row["eval_return"])
        row.setdefault("status", "ok")
    return rows


def evaluate(agent: SacAgent, env_spec: EnvSpec, episodes: int, seed: int, image_size: int) -> float:
    """Mean return of deterministic-action episodes run in lockstep."""
    envs = [make_env(env_spec) for _ in range(episodes)]
    obs = np.stack([env.reset(EVAL_SEED_BASE * (seed + 1) + i) for i, env in enumerate(envs)])
    totals = np.zeros(episodes)
    done = False
    while not done:
        actions = agent.act(center_crop(obs, image_size))
        frames = []
        for i, env in enumerate(envs):
            o, r, done = env.step(actions[i])
            totals[i] += r
            frames.append(o)
        obs = np.stack(frames)
    return float(totals.mean())


def _tensors(agent: SacAgent, batch: dict, *views):
    dev = dict(dtype=agent.dtype)
    return ([agent.to_tensor(v) for v in views],
            torch.as_tensor(batch["action"]).to(**dev),
            torch.as_tensor(batch["reward"]).to(**dev),
            torch.as_tensor(batch["not_done"]).to(**dev))


def joint_update_alternating(agent: SacAgent, heads: SslHeads | None, ssl_optimizer, batch: dict,
                             cfg: TrainConfig, rng: np.random.Generator) -> dict[str, float]:
    """SAC step on the online views, target EMA, then one SSL step on encoder + heads."""
    s_a, s_a_next, s_p, s_p_next = make_branch_views(batch["obs"], batch["next_obs"], cfg.aug1, cfg.aug2, rng)
    (obs, next_obs), action, reward, not_done = _tensors(agent, batch, s_a, s_a_next)
    report = agent.sac_update(obs, action, reward, next_obs, not_done)
    if agent.maybe_update_targets() and heads is not None:
        heads.momentum_update()

    active = cfg.losses.active
    if active:
        p, p_next = agent.to_tensor(s_p), agent.to_tensor(s_p_next)
        losses = heads.compute(SslBatch(obs, next_obs, p, p_next, action, reward), rng, names=active)
        total = combo_loss(active, losses)
        if not torch.isfinite(total):
            raise TrainingDivergedError(f"ssl loss became {total.item()}: "
                                        + ", ".join(f"{k}={v.item():.4g}" for k, v in losses.items()))
        ssl_optimizer.zero_grad(set_to_none=True)
        total.backward()
        ssl_optimizer.step()
        report["ssl_loss"] = total.item()
        report.update({f"ssl/{k}": v.item() for k, v in losses.items()})
    return report


def summed_optimizer(agent: SacAgent, heads: SslHeads | None):
    params = agent.online_parameters() + (heads.trainable_parameters() if heads is not None else [])
    return torch.optim.Adam(params, lr=agent.cfg.lr, betas=agent.cfg.betas)


def joint_update_summed(agent: SacAgent, heads: SslHeads | None, optimizer, batch: dict,
                        cfg: TrainConfig, rng: np.random.Generator) -> dict[str, float]:
    """One step on ``L_RL + w_ssl * L_SSL``; RL terms use the center view, SSL terms the augmented views."""
    out = cfg.image_size
    clean, clean_next = center_crop(batch["obs"], out), center_crop(batch["next_obs"], out)
    s_a, s_a_next, s_p, s_p_next = make_branch_views(batch["obs"], batch["next_obs"], cfg.aug1, cfg.aug2, rng)
    (obs, next_obs), action, reward, not_done = _tensors(agent, batch, clean, clean_next)

    update_actor = agent.update_count % agent.cfg.actor_update_freq == 0
    critic_loss = agent.critic_loss(obs, action, reward, next_obs, not_done)
    rl_loss = critic_loss
    alpha_loss = None
    if update_actor:
        actor_loss, alpha_loss, _ = agent.actor_and_alpha_loss(obs)
        rl_loss = rl_loss + actor_loss

    active = cfg.losses.active
    ssl_loss = torch.zeros((), dtype=agent.dtype)
    if active:
        views = [agent.to_tensor(v) for v in (s_a, s_a_next, s_p, s_p_next)]
        losses = heads.compute(SslBatch(*views, action, reward), rng, names=active)
        ssl_loss = combo_loss(active, losses)
    total = rl_loss + cfg.w_ssl * ssl_loss
    if not torch.isfinite(total) or (alpha_loss is not None and not torch.isfinite(alpha_loss)):
        raise TrainingDivergedError(f"summed loss became {total.item()}")

    optimizer.zero_grad(set_to_none=True)
    total.backward()
    optimizer.step()
    if alpha_loss is not None:
        agent.alpha_optimizer.zero_grad(set_to_none=True)
        alpha_loss.backward()
        agent.alpha_optimizer.step()
    agent.update_count += 1
    if agent.maybe_update_targets() and heads is not None:
        heads.momentum_update()
    rl, ssl = rl_loss.item(), ssl_loss.item()
    return {"rl_loss": rl, "ssl_loss": ssl, "critic_loss": critic_loss.item(), "total": rl + cfg.w_ssl * ssl}


def build_agent(cfg: TrainConfig) -> tuple[SacAgent, SslHeads | None]:
    torch.manual_seed(cfg.seed)
    agent = SacAgent(cfg.env.channels, make_env(cfg.env).action_dim, cfg.agent, image_size=cfg.image_size)
    active = cfg.losses.active
    heads = SslHeads(agent, tuple(active), cfg.ssl) if active else None
    return agent, heads


def ssl_optimizer(agent: SacAgent, heads: SslHeads | None, lr: float):
    if heads is None:
        return None
    return torch.optim.Adam(list(agent.encoder.parameters()) + heads.trainable_parameters(), lr=lr)


def train_run(cfg: TrainConfig, agent_name: str = "agent", checkpoint_dir=None, replay_out=None,
              init_encoder: dict | None = None) -> RunResult:
    """Collect, update once per env step after exploration, and evaluate periodically.

    A diverged run (NaN/inf loss) is returned with ``failed=True``; every
    other error propagates.
    """
    if cfg.regime == "pretrain_then_rl":
        raise ConfigError("use pretrain_then_rl() for the two-stage regime", "train.regime")
    agent, heads = build_agent(cfg)
    if init_encoder is not None:
        agent.encoder.load_state_dict(init_encoder)
        agent.target_encoder.load_state_dict(init_encoder)
    if cfg.regime == "summed":
        optimizer = summed_optimizer(agent, heads)
        update = joint_update_summed
    else:
        optimizer = ssl_optimizer(agent, heads, cfg.ssl_lr)
        update = joint_update_alternating

    rng = np.random.default_rng(cfg.seed)
    env = make_env(cfg.env)
    capacity = min(cfg.buffer_capacity, max(cfg.total_env_steps, cfg.batch_size))
    buffer = ReplayBuffer(capacity, env.obs_shape, env.action_dim, env.state_dim)
    result = RunResult(seed=cfg.seed)

    def run_eval(step):
        score = evaluate(agent, cfg.env, cfg.eval_episodes, cfg.seed, cfg.image_size)
        result.record(step, score)
        log.info("%s seed=%d step=%d eval_return=%.3f", agent_name, cfg.seed, step, score)

    run_eval(0)
    obs = env.reset(int(rng.integers(2**31)))
    updates_since_eval = 0
    try:
        for t in range(cfg.total_env_steps):
            if t < cfg.init_explore_steps:
                action = rng.uniform(-1.0, 1.0, size=env.action_dim).astype(np.float32)
            else:
                action = agent.act(center_crop(obs[None], cfg.image_size), deterministic=False)[0]
            state = env.state
            next_obs, reward, done = env.step(action)
            # time-limit ends keep bootstrapping
            buffer.add(obs, action, reward, next_obs, done and not env.timed_out, state, env.state)
            obs = env.reset(int(rng.integers(2**31))) if done else next_obs

            if t >= cfg.init_explore_steps:
                update(agent, heads, optimizer, sample(buffer, cfg.batch_size, rng), cfg, rng)
                result.updates += 1
                updates_since_eval += 1
            step = t + 1
            if updates_since_eval and (step % cfg.eval_every == 0 or step == cfg.total_env_steps):
                run_eval(step)
                updates_since_eval = 0
    except TrainingDivergedError as exc:
        log.error("%s seed=%d diverged: %s", agent_name, cfg.seed, exc)
        result.failed = True
        result.error = str(exc)

    if checkpoint_dir is not None:
        modules = dict(agent.modules())
        if heads is not None:
            modules["ssl_heads"] = heads
        save_checkpoint(Path(checkpoint_dir) / f"{agent_name}_seed{cfg.seed}.pt", modules, cfg.digest(),
                        extra={"log_alpha": agent.log_alpha.item(), "update_count": agent.update_count})
    if replay_out is not None:
        buffer.save(replay_out, cfg.env.digest())
    return result


def collect_random_dataset(env_spec: EnvSpec, steps: int, seed: int) -> ReplayBuffer:
    """Transitions from a uniform-random policy."""
    rng = np.random.default_rng(seed)
    env = make_env(env_spec)
    buffer = ReplayBuffer(steps, env.obs_shape, env.action_dim, env.state_dim)
    obs = env.reset(int(rng.integers(2**31)))
    for _ in range(steps):
        action = rng.uniform(-1.0, 1.0, size=env.action_dim).astype(np.float32)
        state = env.state
        next_obs, reward, done = env.step(action)
        buffer.add(obs, action, reward, next_obs, done and not env.timed_out, state, env.state)
        obs = env.reset(int(rng.integers(2**31))) if done else next_obs
    return buffer


def pretrain_encoder(cfg: TrainConfig, dataset: ReplayBuffer) -> tuple[SacAgent, dict[str, float]]:
    """Stage 1: optimize the encoder and SSL heads on the SSL objective only."""
    if dataset is None or len(dataset) == 0:
        raise ValueError("pretraining needs a non-empty dataset")
    agent, heads = build_agent(cfg)
    active = cfg.losses.active
    report: dict[str, float] = {}
    if cfg.pretrain_steps == 0:
        return agent, report
    if not active:
        raise ConfigError("pretraining needs at least one non-zero SSL weight", "losses")
    optimizer = ssl_optimizer(agent, heads, cfg.ssl_lr)
    rng = np.random.default_rng(cfg.seed)
    for step in range(cfg.pretrain_steps):
        batch = sample(dataset, cfg.batch_size, rng)
        views = make_branch_views(batch["obs"], batch["next_obs"], cfg.aug1, cfg.aug2, rng)
        tensors, action, reward, _ = _tensors(agent, batch, *views)
        losses = heads.compute(SslBatch(*tensors, action, reward), rng, names=active)
        total = combo_loss(active, losses)
        if not torch.isfinite(total):
            raise TrainingDivergedError(f"pretraining loss became {total.item()}")
        optimizer.zero_grad(set_to_none=True)
        total.backward()
        optimizer.step()
        if step % agent.cfg.critic_target_update_freq == 0:
            ema_update(agent.encoder, agent.target_encoder, agent.cfg.encoder_tau)
            heads.momentum_update()
        report = {"ssl_loss": total.item()}
    return agent, report


def pretrain_then_rl(cfg: TrainConfig, dataset: ReplayBuffer | str | Path | None,
                     agent_name: str = "pretrain") -> RunResult:
    """Stage 1 SSL pretraining, then a fresh SAC run starting from the pretrained encoder."""
    if isinstance(dataset, (str, Path)):
        dataset = ReplayBuffer.load(dataset, cfg.env.digest())
    if dataset is None:
        raise ValueError("pretrain_then_rl needs a dataset")
    agent, _ = pretrain_encoder(cfg, dataset)
    stage2 = replace(cfg, regime="alternating", losses=replace(cfg.losses, weights={}))
    return train_run(stage2, agent_name=agent_name, init_encoder=agent.encoder.state_dict())


def run(cfg: TrainConfig, agent_name: str = "agent", dataset=None, **kwargs) -> RunResult:
    """Dispatch on ``cfg.regime``."""
    if cfg.regime == "pretrain_then_rl":
        if dataset is None:
            dataset = collect_random_dataset(cfg.env, max(cfg.init_explore_steps, cfg.batch_size), cfg.seed)
        return pretrain_then_rl(cfg, dataset, agent_name)
    return train_run(cfg, agent_name, **kwargs)


def is_finite_result(result: RunResult) -> bool:
    return not result.failed and all(math.isfinite(r) for r in result.returns)
