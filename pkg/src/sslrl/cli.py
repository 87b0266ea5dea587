"""Command-line entry point: ``sslrl {train,evolve,probe,report}``.

Experiments are described by INI files whose sections map onto the config
dataclasses::

    [run]      name, seeds, preset (standard|desk), agent_name, checkpoints, save_replay
    [env]      EnvSpec fields
    [encoder]  EncoderConfig fields
    [agent]    AgentConfig fields
    [aug]      kind / kind1 / kind2, m / m1 / m2, out
    [losses]   <loss name> = weight
    [ssl]      SslHeadConfig fields
    [train]    TrainConfig scalars (regime, total_env_steps, batch_size, ...)
    [search]   evolve-only settings

Outputs go under ``--output`` or ``$SSLRL_OUTPUT_ROOT`` (default ``runs``).
Exit codes: 0 success, 2 config error, 3 runtime failure, 4 missing input.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import get_args

import numpy as np

from . import config as C
from .agent import load_checkpoint
from .augment import AugmentationSpec
from .config import ConfigError
from .evalkit import (iqm, read_reports, relative_score_from_iqms, representation_dataset,
                      representation_report, write_reports)
from .evolve import SearchObjective, SearchSpace, SphereObjective, TrainRunFn, run_search
from .ssl.registry import LossCombo
from .trainer import (Regime, ReplayBuffer, TrainConfig, build_agent, desk_config,
                      read_results_csv, run, write_results_csv)

log = logging.getLogger("sslrl")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_INPUT = 0, 2, 3, 4
OUTPUT_ROOT_ENV = "SSLRL_OUTPUT_ROOT"

SECTIONS = ("run", "env", "encoder", "agent", "aug", "losses", "ssl", "train", "search")
TRAIN_SCALARS = ("regime", "total_env_steps", "init_explore_steps", "batch_size", "buffer_capacity",
                 "eval_every", "eval_episodes", "ssl_lr", "w_ssl", "pretrain_steps")


class InputError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    name: str
    train: TrainConfig
    seeds: list[int] = field(default_factory=lambda: [0])
    agent_name: str = ""
    checkpoints: bool = False
    save_replay: bool = False
    flat: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("at least one seed is required", "run.seeds")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct", "run.seeds")
        self.agent_name = self.agent_name or self.name


# -- config parsing --------------------------------------------------------

def _coerce(flat, key, current):
    if isinstance(current, bool):
        return C.get_bool(flat, key)
    if isinstance(current, int):
        return C.get_int(flat, key)
    if isinstance(current, float):
        return C.get_float(flat, key)
    if isinstance(current, tuple) or current is None:
        cast = float if current and isinstance(current[0], float) else int
        return tuple(C.get_list(flat, key, cast))
    return C.get_str(flat, key)


def _override(obj, section: str, flat: dict, skip=()):
    names = {f.name for f in dataclasses.fields(obj)} - set(skip)
    changes = {}
    for key in flat:
        sec, _, name = key.partition(".")
        if sec != section:
            continue
        if name not in names:
            raise ConfigError("unknown key", key)
        changes[name] = _coerce(flat, key, getattr(obj, name))
    try:
        return replace(obj, **changes)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), section) from None


def _aug_specs(base1: AugmentationSpec, base2: AugmentationSpec, flat: dict):
    allowed = {"kind", "kind1", "kind2", "m", "m1", "m2", "out"}
    for key in flat:
        if key.startswith("aug.") and key[4:] not in allowed:
            raise ConfigError("unknown key", key)
    kind = C.get_str(flat, "aug.kind")
    m = C.get_int(flat, "aug.m")
    out = C.get_int(flat, "aug.out", base1.out)
    try:
        spec1 = AugmentationSpec(C.get_str(flat, "aug.kind1", kind or base1.kind),
                                 C.get_int(flat, "aug.m1", m or base1.m), out)
        spec2 = AugmentationSpec(C.get_str(flat, "aug.kind2", kind or base2.kind),
                                 C.get_int(flat, "aug.m2", m or base2.m), out)
    except ValueError as exc:
        raise ConfigError(str(exc), "aug") from None
    return spec1, spec2


def _loss_combo(flat: dict, m1: int, m2: int) -> LossCombo:
    weights = {}
    for key in flat:
        if key.startswith("losses."):
            weights[key[len("losses."):]] = C.get_float(flat, key)
    return LossCombo(weights=weights, m1=m1, m2=m2)


def train_config_from_flat(flat: dict) -> TrainConfig:
    for key in flat:
        if key.partition(".")[0] not in SECTIONS:
            raise ConfigError("unknown section", key)
    preset = C.get_str(flat, "run.preset", "standard")
    if preset == "desk":
        base = desk_config()
    elif preset == "standard":
        base = TrainConfig()
    else:
        raise ConfigError(f"unknown preset {preset!r}", "run.preset")

    env = _override(base.env, "env", flat)
    encoder = _override(base.agent.encoder, "encoder", flat)
    agent = _override(replace(base.agent, encoder=encoder), "agent", flat, skip=("encoder",))
    ssl = _override(base.ssl, "ssl", flat)
    aug1, aug2 = _aug_specs(base.aug1, base.aug2, flat)
    losses = _loss_combo(flat, aug1.m, aug2.m)

    scalars = {}
    for key in flat:
        sec, _, name = key.partition(".")
        if sec != "train":
            continue
        if name not in TRAIN_SCALARS:
            raise ConfigError("unknown key", key)
        if name == "regime":
            scalars[name] = C.get_str(flat, key)
            if scalars[name] not in get_args(Regime):
                raise ConfigError(f"unknown regime {scalars[name]!r}", key)
        else:
            scalars[name] = _coerce(flat, key, getattr(base, name))
    try:
        return replace(base, env=env, agent=agent, ssl=ssl, aug1=aug1, aug2=aug2, losses=losses, **scalars)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), "train") from None


def experiment_from_flat(flat: dict, default_name: str = "experiment") -> ExperimentConfig:
    allowed = {"name", "seeds", "preset", "agent_name", "checkpoints", "save_replay"}
    for key in flat:
        if key.startswith("run.") and key[4:] not in allowed:
            raise ConfigError("unknown key", key)
    cfg = train_config_from_flat(flat)
    return ExperimentConfig(
        name=C.get_str(flat, "run.name", default_name),
        train=cfg,
        seeds=C.get_list(flat, "run.seeds", int, [cfg.seed]),
        agent_name=C.get_str(flat, "run.agent_name", ""),
        checkpoints=C.get_bool(flat, "run.checkpoints", False),
        save_replay=C.get_bool(flat, "run.save_replay", False),
        flat=dict(flat),
    )


def load_experiment(path) -> ExperimentConfig:
    return experiment_from_flat(C.load(path), default_name=Path(path).stem)


# -- train -----------------------------------------------------------------

def _single_thread():
    import torch

    torch.set_num_threads(1)


def _train_seed(cfg: TrainConfig, agent_name: str, out_dir: str, checkpoints: bool, save_replay: bool):
    _single_thread()
    out = Path(out_dir)
    kwargs = {}
    if cfg.regime != "pretrain_then_rl":
        if checkpoints:
            kwargs["checkpoint_dir"] = out / "checkpoints"
        if save_replay:
            kwargs["replay_out"] = out / "replay" / f"seed{cfg.seed}.npz"
    result = run(cfg, agent_name, **kwargs)
    rows = result.rows(agent_name, cfg.env.name)
    write_results_csv(out / "seeds" / f"results_seed{cfg.seed}.csv", rows)
    return result


def summarize(rows: list[dict]) -> list[dict]:
    """Per (agent, env): IQM and sample std of each seed's last evaluation."""
    finals: dict[tuple[str, str], dict[int, tuple[int, float]]] = {}
    for r in rows:
        per_seed = finals.setdefault((r["agent_name"], r["env"]), {})
        prev = per_seed.get(r["seed"])
        if prev is None or r["env_step"] > prev[0]:
            per_seed[r["seed"]] = (r["env_step"], r["eval_return"])
    out = []
    for (agent, env), per_seed in sorted(finals.items()):
        scores = [per_seed[s][1] for s in sorted(per_seed)]
        std = float(np.std(scores, ddof=1)) if len(scores) > 1 else 0.0
        out.append({"agent_name": agent, "env": env, "n_seeds": len(scores), "iqm": iqm(scores),
                    "std": std, "summary": f"{iqm(scores):.3f} ± {std:.3f}"})
    return out


def _write_csv(path: Path, header, rows) -> None:
    import csv

    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})


def _claim_output(out: Path, exp: ExperimentConfig) -> None:
    """One experiment name per output dir: refuse to mix different configs under the same name."""
    stamp = out / "config.ini"
    text = C.dump(exp.flat) if exp.flat else ""
    if stamp.exists() and stamp.read_text() != text:
        raise ConfigError(f"{out} already holds a different experiment named {exp.name!r}", "run.name")
    out.mkdir(parents=True, exist_ok=True)
    stamp.write_text(text)


def cmd_train(exp: ExperimentConfig, output_root: Path, parallel: int = 1) -> int:
    out = output_root / exp.name
    _claim_output(out, exp)
    cfgs = [replace(exp.train, seed=s) for s in exp.seeds]
    args = (exp.agent_name, str(out), exp.checkpoints, exp.save_replay)
    if parallel > 1 and len(cfgs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_train_seed, cfgs, *([a] * len(cfgs) for a in args)))
    else:
        results = [_train_seed(c, *args) for c in cfgs]

    rows = [row for r in results for row in r.rows(exp.agent_name, exp.train.env.name)]
    write_results_csv(out / "results.csv", rows)
    summary = summarize(read_results_csv(out / "results.csv"))
    _write_csv(out / "summary.csv", ("agent_name", "env", "n_seeds", "iqm", "std", "summary"), summary)
    for s in summary:
        print(f"{s['agent_name']} {s['env']}: {s['summary']} (IQM ± std over {s['n_seeds']} seeds)")
    failed = [r.seed for r in results if r.failed]
    if failed:
        print(f"diverged seeds: {failed}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


# -- evolve ----------------------------------------------------------------

@dataclass
class SearchSettings:
    space: SearchSpace
    objective: SearchObjective
    generations: int = 45
    population: int = 50
    strategy: str = "v1"
    seed: int = 0
    top_k: int = 10
    reexamine_seeds: tuple[int, ...] = ()
    workers: int = 1
    run_fn: str = "train"
    sphere_centers: dict = field(default_factory=dict)
    sphere_m: int = 100


def search_settings_from_flat(flat: dict) -> SearchSettings:
    known = {"losses", "weight_scale", "magnitude_min", "magnitude_max", "generations", "population",
             "strategy", "seed", "objective", "envs", "seeds", "top_k", "reexamine_seeds", "workers",
             "run_fn", "sphere_m"}
    refs, mins, centers = {}, {}, {}
    for key in flat:
        if not key.startswith("search."):
            continue
        name = key[len("search."):]
        if name.startswith("reference."):
            refs[name[len("reference."):]] = C.get_float(flat, key)
        elif name.startswith("min_return."):
            mins[name[len("min_return."):]] = C.get_float(flat, key)
        elif name.startswith("sphere."):
            centers[name[len("sphere."):]] = C.get_float(flat, key)
        elif name not in known:
            raise ConfigError("unknown key", key)
    losses = C.get_list(flat, "search.losses")
    if not losses:
        raise ConfigError("required", "search.losses")
    space = SearchSpace(tuple(losses), C.get_str(flat, "search.weight_scale", "linear"),
                        (C.get_int(flat, "search.magnitude_min", 84), C.get_int(flat, "search.magnitude_max", 116)))
    objective = SearchObjective(
        mode=C.get_str(flat, "search.objective", "single_env_iqm"),
        envs=tuple(C.get_list(flat, "search.envs", str, ["point_reacher"])),
        seeds=tuple(C.get_list(flat, "search.seeds", int, [0, 1, 2, 3, 4])),
        reference_scores=refs, min_returns=mins)
    settings = SearchSettings(
        space, objective,
        generations=C.get_int(flat, "search.generations", 45),
        population=C.get_int(flat, "search.population", 50),
        strategy=C.get_str(flat, "search.strategy", "v1"),
        seed=C.get_int(flat, "search.seed", 0),
        top_k=C.get_int(flat, "search.top_k", 10),
        reexamine_seeds=tuple(C.get_list(flat, "search.reexamine_seeds", int, [])),
        workers=C.get_int(flat, "search.workers", 1),
        run_fn=C.get_str(flat, "search.run_fn", "train"),
        sphere_centers=centers,
        sphere_m=C.get_int(flat, "search.sphere_m", 100))
    if settings.generations < 0:
        raise ConfigError("must be >= 0", "search.generations")
    if settings.run_fn not in ("train", "sphere"):
        raise ConfigError(f"unknown run function {settings.run_fn!r}", "search.run_fn")
    for name in centers:
        if name not in space.loss_names:
            raise ConfigError("sphere center for a loss outside the search space", f"search.sphere.{name}")
    return settings


def export_combo(combo: LossCombo) -> str:
    """INI fragment that ``train`` accepts; every searched loss keeps its weight."""
    return C.dump(combo.to_flat())


def cmd_evolve(flat: dict, name: str, output_root: Path, stop_after: int | None = None) -> int:
    settings = search_settings_from_flat(flat)
    if settings.run_fn == "sphere":
        run_fn = SphereObjective(settings.space, settings.sphere_centers, m_star=settings.sphere_m)
    else:
        run_fn = TrainRunFn(train_config_from_flat({k: v for k, v in flat.items()
                                                    if not k.startswith("losses.")}))
    out = output_root / name
    out.mkdir(parents=True, exist_ok=True)
    result = run_search(settings.space, settings.objective, settings.generations, settings.population,
                        settings.seed, run_fn, log_path=out / "search.jsonl", strategy=settings.strategy,
                        top_k=settings.top_k, reexamine_seeds=settings.reexamine_seeds,
                        workers=settings.workers, stop_after=stop_after)
    (out / "best_combo.ini").write_text(export_combo(result.best_combo))
    print(f"best objective {result.best_objective:.6g}: {result.best_combo.key()}")
    return EXIT_OK


# -- probe -----------------------------------------------------------------

def cmd_probe(exp: ExperimentConfig, checkpoints: list[Path], datasets: list[Path], out_path: Path,
              epochs: int, seed: int) -> int:
    """Representation metrics for each checkpoint; the last dataset is held out for the probe test split."""
    import torch

    if len(datasets) < 2:
        raise ConfigError("need at least two donor datasets (train runs + one held-out run)", "--dataset")
    env_hash = exp.train.env.digest()
    buffers = [ReplayBuffer.load(p, env_hash) for p in datasets]
    reports = []
    known = {replace(exp.train, seed=s).digest() for s in exp.seeds}
    for ckpt_path in checkpoints:
        ckpt = load_checkpoint(ckpt_path)
        if ckpt["config_hash"] not in known:
            raise ConfigError(f"{ckpt_path} was trained with a different config", "--checkpoint")
        agent, _ = build_agent(exp.train)
        for name, module in agent.modules().items():
            module.load_state_dict(ckpt["modules"][name])
        with torch.no_grad():
            agent.log_alpha.fill_(ckpt["extra"].get("log_alpha", agent.log_alpha.item()))
        sets = [representation_dataset(agent, b, exp.train.image_size) for b in buffers]
        train = _concat(sets[:-1])
        test = sets[-1]
        step = int(ckpt["extra"].get("update_count", 0))
        reports.append(representation_report(step, test, train, test, seed=seed, probe_epochs=epochs))
    reports.sort(key=lambda r: r.update_step)
    write_reports(out_path, reports)
    for r in reports:
        print(f"step {r.update_step}: dyn={r.dyn_awareness:.4f} div={r.diversity:.4f} "
              f"orth={r.orthogonality:.4f} probe_mse={r.probe_mse:.5f}")
    return EXIT_OK


def _concat(sets):
    from .evalkit import ReprDataset

    return ReprDataset(*(np.concatenate([getattr(s, k) for s in sets])
                         for k in ("phi", "phi_next", "values", "states")))


# -- report ----------------------------------------------------------------

def _find(results_dir: Path, pattern: str) -> list[Path]:
    return sorted(p for p in results_dir.rglob(pattern) if "seeds" not in p.parts)


def relative_score_rows(iqms: dict[str, dict[str, float]]) -> list[dict]:
    scores = relative_score_from_iqms(iqms)
    return [{"agent_name": a, "relative_score": scores[a]} for a in sorted(scores)]


def read_iqm_table(path) -> dict[str, dict[str, float]]:
    """CSV with an ``agent`` column and one column per environment; other columns are ignored."""
    import csv

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        envs = [c for c in reader.fieldnames if c not in ("agent", "relative_score")]
        return {row["agent"]: {e: float(row[e]) for e in envs} for row in reader}


def _save_fig(fig, path: Path) -> None:
    # no timestamp or version strings, so reruns are byte-identical
    fig.savefig(path, format="png", metadata={"Software": None}, dpi=100)


def plot_curves(rows: list[dict], out_dir: Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    for env in sorted({r["env"] for r in rows}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for agent in sorted({r["agent_name"] for r in rows if r["env"] == env}):
            sub = [r for r in rows if r["env"] == env and r["agent_name"] == agent]
            steps = sorted({r["env_step"] for r in sub})
            mean = [np.mean([r["eval_return"] for r in sub if r["env_step"] == s]) for s in steps]
            ax.plot(steps, mean, label=agent)
        ax.set_xlabel("environment steps")
        ax.set_ylabel("evaluation return")
        ax.set_title(env)
        ax.legend()
        path = out_dir / f"curve_{env}.png"
        _save_fig(fig, path)
        plt.close(fig)
        paths.append(path)
    return paths


def plot_metrics(report_files: list[Path], results_dir: Path, out_dir: Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not report_files:
        return []
    fig, axes = plt.subplots(1, 4, figsize=(16, 3.5))
    metrics = ("dyn_awareness", "diversity", "orthogonality", "probe_mse")
    for path in report_files:
        reports = read_reports(path)
        label = str(path.parent.relative_to(results_dir)) if path.parent != results_dir else path.stem
        for ax, m in zip(axes, metrics):
            ax.plot([r.update_step for r in reports], [getattr(r, m) for r in reports], label=label)
            ax.set_title(m)
            ax.set_xlabel("update step")
    axes[0].legend()
    path = out_dir / "metrics.png"
    _save_fig(fig, path)
    plt.close(fig)
    return [path]


def cmd_report(results_dir: Path, out_dir: Path | None = None, iqm_table: Path | None = None) -> int:
    out_dir = out_dir or results_dir / "report"
    result_files = [p for p in _find(results_dir, "results*.csv") if out_dir not in p.parents]
    if iqm_table is None and not result_files:
        raise InputError(f"no results CSV under {results_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)

    if iqm_table is not None:
        rel = relative_score_rows(read_iqm_table(iqm_table))
        _write_csv(out_dir / "relative_score_from_iqm_table.csv", ("agent_name", "relative_score"), rel)
        for r in rel:
            print(f"{r['agent_name']}: {r['relative_score']:.3f}")
    if not result_files:
        return EXIT_OK

    rows = [r for p in result_files for r in read_results_csv(p)]
    rows.sort(key=lambda r: (r["agent_name"], r["env"], r["seed"], r["env_step"]))
    summary = summarize(rows)
    _write_csv(out_dir / "scores.csv", ("agent_name", "env", "n_seeds", "iqm", "std", "summary"), summary)

    iqms: dict[str, dict[str, float]] = {}
    for s in summary:
        iqms.setdefault(s["agent_name"], {})[s["env"]] = s["iqm"]
    envs = sorted({s["env"] for s in summary})
    covered = {a: v for a, v in iqms.items() if set(v) == set(envs)}
    if len(covered) >= 2:
        try:
            rel = relative_score_rows(covered)
        except ValueError as exc:
            log.warning("relative score skipped: %s", exc)
        else:
            _write_csv(out_dir / "relative_score.csv", ("agent_name", "relative_score"), rel)
    plot_curves(rows, out_dir)
    plot_metrics(_find(results_dir, "repr_report*.csv"), results_dir, out_dir)
    for s in summary:
        print(f"{s['agent_name']} {s['env']}: {s['summary']}")
    return EXIT_OK


# -- entry point -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sslrl", description="Joint SAC + self-supervised training experiments.")
    p.add_argument("--output", type=Path, default=None,
                   help=f"output root (default ${OUTPUT_ROOT_ENV} or ./runs)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one config over several seeds")
    t.add_argument("config", type=Path)
    t.add_argument("--seeds", type=str, default=None, help="comma-separated seeds (overrides run.seeds)")
    t.add_argument("--parallel", type=int, default=1, help="worker processes for seed fan-out")

    e = sub.add_parser("evolve", help="particle swarm search over loss weights")
    e.add_argument("config", type=Path)
    e.add_argument("--stop-after", type=int, default=None, help="stop after this many generations")

    pr = sub.add_parser("probe", help="representation metrics for checkpoints over donor datasets")
    pr.add_argument("config", type=Path)
    pr.add_argument("--checkpoint", type=Path, action="append", required=True)
    pr.add_argument("--dataset", type=Path, action="append", required=True,
                    help="replay snapshots; the last one is the held-out probe test set")
    pr.add_argument("--out", type=Path, default=None)
    pr.add_argument("--epochs", type=int, default=2000)
    pr.add_argument("--seed", type=int, default=0)

    r = sub.add_parser("report", help="tables and plots from a results directory")
    r.add_argument("results_dir", type=Path)
    r.add_argument("--out", type=Path, default=None)
    r.add_argument("--iqm-table", type=Path, default=None,
                   help="CSV of per-environment IQMs (agent column + one column per env)")
    return p


def _output_root(args) -> Path:
    return args.output or Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _single_thread()
    try:
        if args.command == "train":
            exp = load_experiment(args.config)
            if args.seeds:
                try:
                    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
                except ValueError:
                    raise ConfigError(f"bad seed list {args.seeds!r}", "--seeds") from None
                exp = replace(exp, seeds=seeds)
            return cmd_train(exp, _output_root(args), args.parallel)
        if args.command == "evolve":
            flat = C.load(args.config)
            return cmd_evolve(flat, C.get_str(flat, "run.name", args.config.stem), _output_root(args),
                              args.stop_after)
        if args.command == "probe":
            exp = load_experiment(args.config)
            out = args.out or _output_root(args) / exp.name / "repr_report.csv"
            return cmd_probe(exp, args.checkpoint, args.dataset, out, args.epochs, args.seed)
        if args.command == "report":
            if not args.results_dir.is_dir() and args.iqm_table is None:
                raise InputError(f"{args.results_dir} is not a directory")
            return cmd_report(args.results_dir, args.out, args.iqm_table)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, FileNotFoundError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.exception("run failed")
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
