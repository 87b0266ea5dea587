"""Built-in pixel point-reacher task and the environment contract.

The arena is the unit square. A point agent starts at the arena center and is
moved by 2-D displacement actions; the target is placed uniformly at random
on reset. Observations are rendered top-down RGB frames stacked along the
channel axis (oldest frame first).

Any external task can be plugged into the trainer as long as it exposes the
same ``reset(seed)`` / ``step(action)`` / ``render()`` surface plus the
``spec``, ``action_dim``, ``state`` and ``timed_out`` attributes.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

BACKGROUND = (24, 24, 24)
AGENT_COLOR = (40, 220, 40)
TARGET_COLOR = (230, 40, 40)
AGENT_RADIUS_PX = 3
TARGET_HALF_PX = 4


@dataclass(frozen=True)
class EnvSpec:
    name: str = "point_reacher"
    obs_render_size: int = 100
    frame_stack: int = 3
    action_repeat: int = 1
    episode_len: int = 200
    reward_mode: Literal["sparse", "dense"] = "dense"
    distance_threshold: float = 0.08
    step_scale: float = 0.08

    def __post_init__(self):
        if self.obs_render_size < 84:
            raise ValueError(f"obs_render_size must be >= 84, got {self.obs_render_size}")
        if self.frame_stack < 1:
            raise ValueError(f"frame_stack must be >= 1, got {self.frame_stack}")
        if self.episode_len < 1:
            raise ValueError(f"episode_len must be >= 1, got {self.episode_len}")
        if self.action_repeat < 1:
            raise ValueError(f"action_repeat must be >= 1, got {self.action_repeat}")
        if self.reward_mode not in ("sparse", "dense"):
            raise ValueError(f"unknown reward_mode {self.reward_mode!r}")

    @property
    def channels(self) -> int:
        return 3 * self.frame_stack

    def digest(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool
    state: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        a = np.asarray(self.a)
        if np.any(np.abs(a) > 1.0):
            raise ValueError("action components must lie in [-1, 1]")


class PointReacher:
    """2-D point reacher rendered to pixels.

    Actions displace the agent by ``step_scale`` arena widths per unit and the
    position is clamped to the arena. Episodes end after ``episode_len`` steps.
    """

    action_dim = 2
    state_dim = 4

    def __init__(self, spec: EnvSpec | None = None):
        self.spec = spec or EnvSpec()
        self._frames: deque[np.ndarray] = deque(maxlen=self.spec.frame_stack)
        self.agent = np.array([0.5, 0.5])
        self.target = np.array([0.5, 0.5])
        self._t = 0
        self._ready = False

    @property
    def obs_shape(self) -> tuple[int, int, int]:
        s = self.spec.obs_render_size
        return (s, s, self.spec.channels)

    @property
    def state(self) -> np.ndarray:
        """Ground-truth simulator state: agent xy followed by target xy."""
        return np.concatenate([self.agent, self.target]).astype(np.float32)

    @property
    def timed_out(self) -> bool:
        # the only way an episode ends is the step limit
        return self._t >= self.spec.episode_len

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        self.agent = np.array([0.5, 0.5])
        self.target = rng.uniform(0.0, 1.0, size=2)
        self._t = 0
        self._ready = True
        frame = self.render()
        self._frames.clear()
        for _ in range(self.spec.frame_stack):
            self._frames.append(frame)
        return self._observation()

    def distance(self) -> float:
        return float(np.linalg.norm(self.agent - self.target))

    def reward(self) -> float:
        d = self.distance()
        if self.spec.reward_mode == "sparse":
            return 1.0 if d < self.spec.distance_threshold else -1e-3
        return -d / np.sqrt(2.0)

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        if not self._ready:
            raise RuntimeError("step() called before reset()")
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if a.shape != (self.action_dim,):
            raise ValueError(f"expected action of shape ({self.action_dim},), got {a.shape}")
        if np.any(np.abs(a) > 1.0) or not np.all(np.isfinite(a)):
            raise ValueError(f"action out of range [-1, 1]: {a}")
        total = 0.0
        for _ in range(self.spec.action_repeat):
            self.agent = np.clip(self.agent + self.spec.step_scale * a, 0.0, 1.0)
            total += self.reward()
        self._t += 1
        done = self._t >= self.spec.episode_len
        if done:
            self._ready = False
        self._frames.append(self.render())
        return self._observation(), total, done

    def _observation(self) -> np.ndarray:
        return np.concatenate(list(self._frames), axis=-1)

    def render(self, agent=None, target=None) -> np.ndarray:
        """Rasterize a pose into an RGB frame (nearest sampling, no anti-aliasing)."""
        agent = self.agent if agent is None else np.asarray(agent)
        target = self.target if target is None else np.asarray(target)
        return render_pose(agent, target, self.spec.obs_render_size)


def pose_to_pixel(pos, size: int) -> tuple[float, float]:
    """Map arena coordinates to (row, col) pixel-center coordinates.

    x grows to the right, y grows downward in the image.
    """
    x, y = float(pos[0]), float(pos[1])
    return y * (size - 1), x * (size - 1)


def render_pose(agent, target, size: int) -> np.ndarray:
    img = np.empty((size, size, 3), dtype=np.uint8)
    img[:] = BACKGROUND
    rows = np.arange(size)[:, None]
    cols = np.arange(size)[None, :]

    tr, tc = pose_to_pixel(target, size)
    square = (np.abs(rows - tr) <= TARGET_HALF_PX) & (np.abs(cols - tc) <= TARGET_HALF_PX)
    img[square] = TARGET_COLOR

    ar, ac = pose_to_pixel(agent, size)
    disc = (rows - ar) ** 2 + (cols - ac) ** 2 <= AGENT_RADIUS_PX**2
    img[disc] = AGENT_COLOR
    return img


def make_env(spec: EnvSpec) -> PointReacher:
    if not spec.name.startswith("point_reacher"):
        raise ValueError(f"unknown environment {spec.name!r}")
    return PointReacher(spec)


ENV_PRESETS: dict[str, EnvSpec] = {
    "point_reacher": EnvSpec(),
    "point_reacher_sparse": EnvSpec(name="point_reacher_sparse", reward_mode="sparse"),
}


def env_spec_by_name(name: str, **overrides) -> EnvSpec:
    if name not in ENV_PRESETS:
        raise ValueError(f"unknown environment preset {name!r}; choose from {sorted(ENV_PRESETS)}")
    return dataclasses.replace(ENV_PRESETS[name], **overrides)


def min_episode_return(spec: EnvSpec) -> float:
    """Lowest achievable return; used to score failed runs."""
    per_step = -1e-3 if spec.reward_mode == "sparse" else -1.0
    return per_step * spec.action_repeat * spec.episode_len
