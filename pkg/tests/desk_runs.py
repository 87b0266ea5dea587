"""Desk-scale training runs used by the acceptance suite, with an on-disk cache.

The runs take hours on one CPU core, so each finished run is stored as JSON
under ``tests/data/desk_cache``. A cached entry is reused only when both the
run's config digest and a fingerprint of the library sources it exercises
match; any edit to the training code invalidates the cache and the run is
repeated.

    python tests/desk_runs.py            # fill the cache (SAC seeds, then the loss sweep)
    python tests/desk_runs.py --status   # show what is cached
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import time
from pathlib import Path

import torch

import sslrl
from sslrl.ssl.registry import LOSS_NAMES, LossCombo
from sslrl.trainer import TrainConfig, desk_config, train_run

CACHE_DIR = Path(__file__).parent / "data" / "desk_cache"
SOURCES = ("env.py", "augment.py", "agent.py", "config.py", "trainer.py", "ssl/losses.py", "ssl/heads.py",
           "ssl/registry.py", "ssl/__init__.py")

SAC_SEEDS = (0, 1, 2, 3, 4)
SWEEP_UPDATES = 5000
SWEEP_EXPLORE = 1000


def source_fingerprint() -> str:
    root = Path(sslrl.__file__).parent
    h = hashlib.sha256()
    for rel in SOURCES:
        h.update(rel.encode())
        h.update((root / rel).read_bytes())
    return h.hexdigest()[:16]


def sac_config(seed: int) -> TrainConfig:
    """SAC with random crop 100 -> 84, batch 128, 30k env steps; no SSL loss."""
    return desk_config(seed=seed)


def sweep_config(loss: str) -> TrainConfig:
    """One SSL loss at weight 1 trained jointly for 5k update steps (batch 32)."""
    return desk_config(losses=LossCombo(weights={loss: 1.0}), batch_size=32, init_explore_steps=SWEEP_EXPLORE,
                       total_env_steps=SWEEP_EXPLORE + SWEEP_UPDATES, eval_every=SWEEP_UPDATES,
                       eval_episodes=2)


def all_runs() -> list[tuple[str, TrainConfig]]:
    runs = [(f"sac_seed{s}", sac_config(s)) for s in SAC_SEEDS]
    runs += [(f"sweep_{name}", sweep_config(name)) for name in LOSS_NAMES]
    return runs


def _path(key: str) -> Path:
    return CACHE_DIR / f"{key}.json"


def load(key: str, cfg: TrainConfig) -> dict | None:
    path = _path(key)
    if not path.exists():
        return None
    entry = json.loads(path.read_text())
    if entry["config_digest"] != cfg.digest() or entry["fingerprint"] != source_fingerprint():
        return None
    return entry


def execute(key: str, cfg: TrainConfig) -> dict:
    torch.set_num_threads(1)
    cpu0, wall0 = time.process_time(), time.perf_counter()
    result = train_run(cfg, agent_name=key)
    entry = {
        "key": key, "config_digest": cfg.digest(), "fingerprint": source_fingerprint(),
        "steps": result.steps, "returns": [r if math.isfinite(r) else repr(r) for r in result.returns],
        "failed": result.failed, "error": result.error, "updates": result.updates,
        "cpu_seconds": time.process_time() - cpu0, "wall_seconds": time.perf_counter() - wall0,
    }
    CACHE_DIR.mkdir(parents=True, exist_ok=True)
    tmp = _path(key).with_suffix(".tmp")
    tmp.write_text(json.dumps(entry, indent=1, sort_keys=True))
    tmp.replace(_path(key))
    return entry


def get(key: str, cfg: TrainConfig) -> dict:
    return load(key, cfg) or execute(key, cfg)


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--status", action="store_true")
    p.add_argument("--only", default=None, help="run keys starting with this prefix")
    args = p.parse_args(argv)
    for key, cfg in all_runs():
        if args.only and not key.startswith(args.only):
            continue
        entry = load(key, cfg)
        if args.status:
            print(f"{key}: {'cached' if entry else 'missing'}")
            continue
        if entry is None:
            entry = execute(key, cfg)
        first, last = entry["returns"][0], entry["returns"][-1]
        print(f"{key}: first={first} final={last} failed={entry['failed']} "
              f"cpu={entry['cpu_seconds'] / 60:.1f} min", flush=True)


if __name__ == "__main__":
    main()
