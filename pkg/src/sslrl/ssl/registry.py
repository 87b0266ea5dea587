"""Loss names, RL-context I/O table and weighted loss combinations."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

from ..config import ConfigError

Role = Literal["repr_next", "action", "reward"]
ROLES: tuple[Role, ...] = ("repr_next", "action", "reward")


@dataclass(frozen=True)
class ContextSpec:
    second_input: Role
    outputs: tuple[Role, ...]

    def __post_init__(self):
        if self.second_input not in ROLES:
            raise ConfigError(f"unknown context input {self.second_input!r}")
        if not self.outputs:
            raise ConfigError("context spec needs at least one output")
        if any(o not in ROLES for o in self.outputs):
            raise ConfigError(f"unknown context output in {self.outputs}")
        if self.second_input in self.outputs:
            raise ConfigError("a context role cannot be both input and output")
        if len(set(self.outputs)) != len(self.outputs):
            raise ConfigError("duplicate context outputs")


CONTEXT_SPECS: dict[str, ContextSpec] = {
    "extract_a": ContextSpec("repr_next", ("action",)),
    "extract_r": ContextSpec("repr_next", ("reward",)),
    "guess_a": ContextSpec("reward", ("action",)),
    "guess_f": ContextSpec("reward", ("repr_next",)),
    "predict_f": ContextSpec("action", ("repr_next",)),
    "predict_r": ContextSpec("action", ("reward",)),
    "extract_ar": ContextSpec("repr_next", ("action", "reward")),
    "guess_af": ContextSpec("reward", ("action", "repr_next")),
    "predict_fr": ContextSpec("action", ("repr_next", "reward")),
}
TWO_OUTPUT = ("extract_ar", "guess_af", "predict_fr")

PAIRWISE = ("curl", "curl_w_action", "curl_w_critic", "byol", "simsiam", "dino")
TRANSFORM = ("rotation_cls", "shuffle_cls")
RECONSTRUCTION = ("ae", "mae")
CONTEXT = tuple(CONTEXT_SPECS) + tuple(f"{n}_balanced" for n in TWO_OUTPUT)

LOSS_NAMES: tuple[str, ...] = PAIRWISE + TRANSFORM + RECONSTRUCTION + CONTEXT
# heads whose target branch is an EMA copy
MOMENTUM_LOSSES = ("byol", "dino")


def context_spec(name: str) -> tuple[ContextSpec, bool]:
    """``(spec, balanced)`` for a context loss name."""
    balanced = name.endswith("_balanced")
    base = name[: -len("_balanced")] if balanced else name
    if base not in CONTEXT_SPECS or (balanced and base not in TWO_OUTPUT):
        raise ConfigError(f"unknown context loss {name!r}")
    return CONTEXT_SPECS[base], balanced


def check_loss_name(name: str, field_name: str = "losses") -> None:
    if name not in LOSS_NAMES:
        raise ConfigError(f"unknown loss {name!r}", f"{field_name}.{name}")


@dataclass(frozen=True)
class LossCombo:
    """Named SSL weights plus the two augmentation magnitudes (online m1, target m2)."""

    weights: dict[str, float] = field(default_factory=dict)
    m1: int = 100
    m2: int = 100

    def __post_init__(self):
        for name, w in self.weights.items():
            check_loss_name(name)
            if w < 0:
                raise ConfigError(f"weight must be >= 0, got {w}", f"losses.{name}")
        for key in ("m1", "m2"):
            if getattr(self, key) < 84:
                raise ConfigError("magnitude must be >= 84", f"losses.{key}")

    @property
    def active(self) -> dict[str, float]:
        return {n: w for n, w in self.weights.items() if w != 0}

    def to_flat(self) -> dict[str, object]:
        flat: dict[str, object] = {f"losses.{n}": w for n, w in sorted(self.weights.items())}
        flat["aug.m1"] = self.m1
        flat["aug.m2"] = self.m2
        return flat

    def key(self) -> str:
        parts = [f"{n}={w!r}" for n, w in sorted(self.weights.items())]
        return ";".join(parts + [f"m1={self.m1}", f"m2={self.m2}"])
