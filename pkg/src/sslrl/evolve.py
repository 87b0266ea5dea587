"""Particle swarm search over SSL loss weights and augmentation magnitudes.

A particle's position is ``N_l`` weight coordinates followed by the two
magnitudes ``(m1, m2)``. In the log10 weight scale the weight coordinates are
exponents. Magnitudes stay continuous inside the swarm and are rounded only
when a position is decoded for evaluation.

The search log is JSON lines. Each evaluated particle writes an ``eval``
record; each finished generation writes a ``generation`` record carrying the
full swarm and RNG state, which is what :func:`run_search` resumes from.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Literal, Sequence

import numpy as np

from .config import ConfigError
from .env import env_spec_by_name, min_episode_return
from .evalkit import iqm
from .ssl.registry import LossCombo, check_loss_name

log = logging.getLogger(__name__)

OMEGA = 0.729
C1 = C2 = 1.49445
V1_MAGNITUDE = 88
V2_MAGNITUDES = (86, 88, 92, 100, 116)

RunFn = Callable[[LossCombo, int, str], float]


@dataclass(frozen=True)
class SearchSpace:
    loss_names: tuple[str, ...]
    weight_scale: Literal["linear", "log10"] = "linear"
    magnitude_range: tuple[int, int] = (84, 116)

    def __post_init__(self):
        if not self.loss_names:
            raise ConfigError("search space needs at least one loss", "search.losses")
        for name in self.loss_names:
            check_loss_name(name, "search.losses")
        if self.weight_scale not in ("linear", "log10"):
            raise ConfigError(f"unknown weight scale {self.weight_scale!r}", "search.weight_scale")
        lo, hi = self.magnitude_range
        if not 84 <= lo < hi:
            raise ConfigError("magnitude range must be nonempty and start at >= 84", "search.magnitude_range")

    @property
    def n_losses(self) -> int:
        return len(self.loss_names)

    @property
    def dim(self) -> int:
        return self.n_losses + 2

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        w_lo, w_hi = (0.0, 10.0) if self.weight_scale == "linear" else (-4.0, 4.0)
        m_lo, m_hi = self.magnitude_range
        lo = np.array([w_lo] * self.n_losses + [m_lo, m_lo], dtype=np.float64)
        hi = np.array([w_hi] * self.n_losses + [m_hi, m_hi], dtype=np.float64)
        return lo, hi

    def one_hot(self, k: int, m: float) -> np.ndarray:
        """Weight ``1`` on loss ``k`` and zero (or the log floor) elsewhere."""
        lo, _ = self.bounds()
        x = lo.copy()
        x[k] = 1.0 if self.weight_scale == "linear" else 0.0
        x[-2:] = m
        return x

    def decode(self, position) -> LossCombo:
        x = np.asarray(position, dtype=np.float64)
        w = x[: self.n_losses]
        if self.weight_scale == "log10":
            w = 10.0 ** w
        m_lo, m_hi = self.magnitude_range
        m1, m2 = (int(np.clip(np.rint(v), m_lo, m_hi)) for v in x[-2:])
        return LossCombo(weights={n: float(v) for n, v in zip(self.loss_names, w)}, m1=m1, m2=m2)


@dataclass
class Particle:
    id: int
    position: np.ndarray
    velocity: np.ndarray
    best_position: np.ndarray | None = None
    best_objective: float = -math.inf

    def to_json(self) -> dict:
        return {"id": self.id, "position": self.position.tolist(), "velocity": self.velocity.tolist(),
                "best_position": None if self.best_position is None else self.best_position.tolist(),
                "best_objective": _json_float(self.best_objective)}

    @classmethod
    def from_json(cls, d: dict) -> "Particle":
        best = None if d["best_position"] is None else np.array(d["best_position"])
        return cls(d["id"], np.array(d["position"]), np.array(d["velocity"]), best,
                   _from_json_float(d["best_objective"]))


@dataclass(frozen=True)
class SearchObjective:
    mode: Literal["single_env_iqm", "multi_env_normalized"] = "single_env_iqm"
    envs: tuple[str, ...] = ("point_reacher",)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    reference_scores: dict[str, float] = field(default_factory=dict)
    min_returns: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("single_env_iqm", "multi_env_normalized"):
            raise ConfigError(f"unknown objective mode {self.mode!r}", "search.objective")
        if len(self.seeds) < 3:
            raise ConfigError("the objective needs at least 3 seeds", "search.seeds")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct", "search.seeds")
        if self.mode == "single_env_iqm" and len(self.envs) != 1:
            raise ConfigError("single_env_iqm takes exactly one env", "search.envs")
        if self.mode == "multi_env_normalized":
            missing = [e for e in self.envs if e not in self.reference_scores]
            if missing:
                raise ConfigError(f"missing reference score for {missing}", "search.reference_scores")
            if any(self.reference_scores[e] == 0 for e in self.envs):
                raise ConfigError("reference scores must be non-zero", "search.reference_scores")

    def min_return(self, env: str) -> float:
        if env in self.min_returns:
            return self.min_returns[env]
        return min_episode_return(env_spec_by_name(env))

    def aggregate(self, scores: dict[str, list[float]]) -> float:
        if self.mode == "single_env_iqm":
            return iqm(scores[self.envs[0]])
        return float(np.mean([iqm(scores[e]) / self.reference_scores[e] for e in self.envs]))


def init_population(space: SearchSpace, strategy: str, size: int, rng: np.random.Generator) -> list[Particle]:
    lo, hi = space.bounds()
    if strategy == "v1":
        seeded = [space.one_hot(k, V1_MAGNITUDE) for k in range(space.n_losses)]
    elif strategy == "v2":
        seeded = [space.one_hot(k, t) for t in V2_MAGNITUDES for k in range(space.n_losses)]
    elif strategy == "random":
        seeded = []
    else:
        raise ConfigError(f"unknown initialization strategy {strategy!r}", "search.init")
    if size < len(seeded):
        raise ValueError(f"population {size} smaller than the {len(seeded)} seeded particles")
    positions = seeded + [rng.uniform(lo, hi) for _ in range(size - len(seeded))]
    return [Particle(i, np.clip(np.asarray(x, dtype=np.float64), lo, hi), np.zeros(space.dim))
            for i, x in enumerate(positions)]


def pso_step(particles: Sequence[Particle], global_best: np.ndarray, rng: np.random.Generator,
             space: SearchSpace, omega: float = OMEGA, c1: float = C1, c2: float = C2) -> list[Particle]:
    """Velocity/position update; velocities clamped to half the range, positions to the bounds."""
    lo, hi = space.bounds()
    v_max = 0.5 * (hi - lo)
    out = []
    for p in particles:
        if p.best_position is None:
            raise ValueError(f"particle {p.id} has no evaluated personal best")
        r1 = rng.random(space.dim)
        r2 = rng.random(space.dim)
        v = omega * p.velocity + c1 * r1 * (p.best_position - p.position) + c2 * r2 * (global_best - p.position)
        v = np.clip(v, -v_max, v_max)
        x = np.clip(p.position + v, lo, hi)
        out.append(replace(p, position=x, velocity=v))
    return out


class EvaluationCache:
    """Scores per ``(combo key, seed, env)``; a failed run stores the env's minimum return."""

    def __init__(self):
        self.scores: dict[tuple[str, int, str], float] = {}

    def missing(self, combos: Sequence[LossCombo], objective: SearchObjective) -> list[tuple[LossCombo, int, str]]:
        todo, seen = [], set()
        for combo in combos:
            for env in objective.envs:
                for seed in objective.seeds:
                    key = (combo.key(), seed, env)
                    if key not in self.scores and key not in seen:
                        seen.add(key)
                        todo.append((combo, seed, env))
        return todo

    def table(self, combo: LossCombo, objective: SearchObjective) -> dict[str, list[float]]:
        return {env: [self.scores[combo.key(), s, env] for s in objective.seeds] for env in objective.envs}


def _safe_run(run_fn: RunFn, combo: LossCombo, seed: int, env: str, floor: float) -> float:
    try:
        score = float(run_fn(combo, seed, env))
    except Exception as exc:  # noqa: BLE001 - a crashed run is scored, not fatal
        log.warning("run failed (%s, seed=%d, env=%s): %s", combo.key(), seed, env, exc)
        return floor
    if not math.isfinite(score):
        log.warning("run returned %s (%s, seed=%d, env=%s)", score, combo.key(), seed, env)
        return floor
    return score


def _fill_cache(cache: EvaluationCache, combos, objective, run_fn, workers: int) -> None:
    todo = cache.missing(combos, objective)
    floors = [objective.min_return(env) for _, _, env in todo]
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_safe_run, [run_fn] * len(todo), *zip(*todo), floors))
    else:
        results = [_safe_run(run_fn, c, s, e, f) for (c, s, e), f in zip(todo, floors)]
    for (combo, seed, env), score in zip(todo, results):
        cache.scores[combo.key(), seed, env] = score


def evaluate_particle(position, space: SearchSpace, objective: SearchObjective, run_fn: RunFn,
                      cache: EvaluationCache | None = None) -> float:
    cache = cache or EvaluationCache()
    combo = space.decode(position)
    _fill_cache(cache, [combo], objective, run_fn, workers=1)
    return objective.aggregate(cache.table(combo, objective))


@dataclass
class SearchResult:
    records: list[dict]
    best_series: list[float]
    best_combo: LossCombo
    best_objective: float


def _json_float(x: float):
    return x if math.isfinite(x) else str(x)


def _from_json_float(x) -> float:
    return float(x)


def _dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True)


def _position_record(space: SearchSpace, position: np.ndarray) -> dict:
    combo = space.decode(position)
    named = {n: combo.weights[n] for n in space.loss_names}
    named.update(m1=combo.m1, m2=combo.m2)
    return named


def _load_log(path: Path) -> tuple[list[dict], dict | None]:
    """Records up to and including the last ``generation`` record, plus that record."""
    records, kept, last = [], [], None
    if not path.exists():
        return kept, last
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            break  # torn final line from an interrupted write
        records.append(rec)
        if rec["type"] == "generation":
            kept = list(records)
            last = rec
    return kept, last


def run_search(space: SearchSpace, objective: SearchObjective, generations: int, population: int,
               seed: int, run_fn: RunFn, log_path=None, strategy: str = "v1", top_k: int = 10,
               reexamine_seeds: Sequence[int] = (), workers: int = 1,
               stop_after: int | None = None) -> SearchResult:
    """Evaluate, update bests, step; repeat for ``generations`` PSO steps after the initial population.

    With ``log_path`` set, an existing log is resumed from its last completed
    generation. ``stop_after`` ends the call after that many generations have
    been completed in this call (used to simulate interruptions).
    """
    log_path = Path(log_path) if log_path is not None else None
    rng = np.random.default_rng(seed)
    cache = EvaluationCache()
    records: list[dict] = []
    best_series: list[float] = []
    g_best_pos, g_best_obj = None, -math.inf
    start_gen = 0
    particles = None

    if log_path is not None:
        kept, last = _load_log(log_path)
        if last is not None:
            records = kept
            state = last["state"]
            particles = [Particle.from_json(p) for p in state["particles"]]
            rng.bit_generator.state = state["rng"]
            g_best_pos = np.array(state["global_best_position"])
            g_best_obj = _from_json_float(state["global_best_objective"])
            best_series = [_from_json_float(r["global_best_objective"]) for r in records
                           if r["type"] == "generation"]
            start_gen = last["generation"] + 1
            for rec in records:
                if rec["type"] == "eval":
                    key = space.decode(rec["raw_position"]).key()
                    for env, scores in rec["scores"].items():
                        for s, v in zip(objective.seeds, scores):
                            cache.scores[key, s, env] = float(v)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        log_path.write_text("".join(_dumps(r) + "\n" for r in records))

    if particles is None:
        particles = init_population(space, strategy, population, rng)

    done_here = 0
    for gen in range(start_gen, generations + 1):
        if gen > 0:
            particles = pso_step(particles, g_best_pos, rng, space)
        combos = [space.decode(p.position) for p in particles]
        _fill_cache(cache, combos, objective, run_fn, workers)
        new_records = []
        for p, combo in zip(particles, combos):
            table = cache.table(combo, objective)
            obj = objective.aggregate(table)
            if obj > p.best_objective:
                p.best_objective, p.best_position = obj, p.position.copy()
            if obj > g_best_obj:
                g_best_obj, g_best_pos = obj, p.position.copy()
            new_records.append({"type": "eval", "generation": gen, "particle_id": p.id,
                                "position": _position_record(space, p.position),
                                "raw_position": p.position.tolist(), "scores": table, "objective": obj})
        best_series.append(g_best_obj)
        new_records.append({
            "type": "generation", "generation": gen, "global_best_objective": _json_float(g_best_obj),
            "global_best_position": _position_record(space, g_best_pos),
            "state": {"particles": [p.to_json() for p in particles], "rng": rng.bit_generator.state,
                      "global_best_position": g_best_pos.tolist(),
                      "global_best_objective": _json_float(g_best_obj)},
        })
        records.extend(new_records)
        if log_path is not None:
            with open(log_path, "a") as fh:
                fh.write("".join(_dumps(r) + "\n" for r in new_records))
        log.info("generation %d: best objective %.6g", gen, g_best_obj)
        done_here += 1
        if stop_after is not None and done_here >= stop_after and gen < generations:
            break

    best_combo, best_obj = select_final(records, space, objective, run_fn, cache, top_k, reexamine_seeds)
    return SearchResult(records, best_series, best_combo, best_obj)


def top_records(records: Sequence[dict], k: int) -> list[dict]:
    """Best ``k`` distinct positions by objective; ties keep the earlier record."""
    evals = [r for r in records if r["type"] == "eval"]
    order = sorted(range(len(evals)), key=lambda i: (-evals[i]["objective"], i))
    out, seen = [], set()
    for i in order:
        key = json.dumps(evals[i]["position"], sort_keys=True)
        if key in seen:
            continue
        seen.add(key)
        out.append(evals[i])
        if len(out) == k:
            break
    return out


def select_final(records, space, objective, run_fn, cache, top_k=10, reexamine_seeds=()):
    """Pick the answer among the top-k records, optionally re-scored on extra seeds."""
    candidates = top_records(records, top_k)
    if not candidates:
        raise ValueError("search log has no evaluations")
    if not reexamine_seeds:
        best = candidates[0]
        return space.decode(best["raw_position"]), best["objective"]
    check = replace(objective, seeds=tuple(reexamine_seeds))
    combos = [space.decode(r["raw_position"]) for r in candidates]
    _fill_cache(cache, combos, check, run_fn, workers=1)
    scored = [(check.aggregate(cache.table(c, check)), -i, c) for i, c in enumerate(combos)]
    obj, _, combo = max(scored, key=lambda t: (t[0], t[1]))
    return combo, obj


class SphereObjective:
    """Synthetic run function: a sphere over the search space's normalized coordinates.

    Each coordinate is divided by its range (weights in exponent units for
    log10 spaces), so ``-sum(((x - x*) / range)^2)`` weighs weights and
    magnitudes alike. The optimum (value 0) sits at ``centers`` with integer
    magnitudes ``m_star``; losses without a center aim at the lower bound.
    """

    def __init__(self, space: SearchSpace, centers: dict[str, float], m_star: int = 100):
        unknown = set(centers) - set(space.loss_names)
        if unknown:
            raise ConfigError(f"sphere centers for losses outside the space: {sorted(unknown)}", "search.sphere")
        lo, hi = space.bounds()
        m_lo, m_hi = space.magnitude_range
        if not m_lo <= m_star <= m_hi:
            raise ConfigError("sphere optimum outside the magnitude range", "search.sphere_m")
        self.space = space
        self.centers = {n: self._coord(centers.get(n, 10.0 ** lo[0] if space.weight_scale == "log10" else lo[0]))
                        for n in space.loss_names}
        self.m_star = m_star
        self.w_range = float(hi[0] - lo[0])
        self.m_range = float(m_hi - m_lo)

    def _coord(self, w: float) -> float:
        return math.log10(w) if self.space.weight_scale == "log10" else w

    def __call__(self, combo: LossCombo, seed: int, env: str) -> float:
        w = sum(((self._coord(combo.weights[n]) - c) / self.w_range) ** 2 for n, c in self.centers.items())
        m = sum(((m - self.m_star) / self.m_range) ** 2 for m in (combo.m1, combo.m2))
        return -(w + m)


class TrainRunFn:
    """Run function backed by the trainer: final score of one training run."""

    def __init__(self, base_cfg):
        self.base_cfg = base_cfg

    def __call__(self, combo: LossCombo, seed: int, env: str) -> float:
        from .trainer import apply_combo, train_run

        env_spec = env_spec_by_name(env, frame_stack=self.base_cfg.env.frame_stack)
        cfg = apply_combo(replace(self.base_cfg, seed=seed, env=env_spec), combo)
        result = train_run(cfg, agent_name="search")
        if result.failed:
            return float("nan")
        return result.final_score
