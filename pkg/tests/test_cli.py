import csv
import json
from pathlib import Path

import pytest

from sslrl import cli
from sslrl import config as C
from sslrl.config import ConfigError
from sslrl.ssl.registry import LossCombo

TABLE = Path(__file__).parent / "data" / "dmc_iqm_table.csv"

TINY = """\
[run]
name = tiny
seeds = 0, 1
preset = desk

[env]
episode_len = 10

[agent]
hidden_dim = 32

[ssl]
proj_hidden = 32
proj_out = 16
mlp_hidden = 32

[train]
total_env_steps = 30
init_explore_steps = 20
batch_size = 4
eval_every = 10
eval_episodes = 2

[losses]
curl = 1.0
"""

SPHERE = """\
[run]
name = sphere

[search]
losses = curl, byol, ae
run_fn = sphere
sphere.curl = 3.0
sphere.byol = 0.5
population = 8
generations = 4
seeds = 0, 1, 2
"""


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# config parsing -------------------------------------------------------------

def test_config_text_roundtrip():
    flat = C.parse_text(TINY)
    assert flat["train.batch_size"] == "4"
    assert C.parse_text(C.dump(flat)) == flat


def test_keys_before_a_section_go_to_run():
    assert C.parse_text("name = x\nseeds = 1,2\n") == {"run.name": "x", "run.seeds": "1,2"}


def test_experiment_from_config_text():
    exp = cli.experiment_from_flat(C.parse_text(TINY))
    assert exp.name == "tiny" and exp.seeds == [0, 1]
    cfg = exp.train
    assert cfg.batch_size == 4 and cfg.env.episode_len == 10 and cfg.agent.hidden_dim == 32
    assert cfg.agent.encoder.filters == 16
    assert cfg.losses.weights == {"curl": 1.0}


def test_standard_preset_defaults():
    cfg = cli.train_config_from_flat({})
    assert cfg.batch_size == 128 and cfg.total_env_steps == 30_000
    assert cfg.agent.critic_tau == 0.01 and cfg.agent.encoder_tau == 0.05


@pytest.mark.parametrize("text, field", [
    ("[losses]\ncurll = 1\n", "losses.curll"),
    ("[agent]\ncritic_tauu = 0.1\n", "agent.critic_tauu"),
    ("[train]\nbatch_size = many\n", "train.batch_size"),
    ("[trian]\nbatch_size = 4\n", "trian.batch_size"),
    ("[aug]\nm1 = 80\n", "aug"),
    ("[run]\nseeds = 1, 1\n", "run.seeds"),
    ("[run]\npreset = huge\n", "run.preset"),
    ("[train]\nregime = sequential\n", "train.regime"),
])
def test_config_errors_name_the_field(text, field):
    with pytest.raises(ConfigError) as info:
        cli.experiment_from_flat(C.parse_text(text))
    assert info.value.field == field


def test_unknown_loss_exits_with_config_code(tmp_path, capsys):
    path = write(tmp_path, "bad.ini", "[run]\nname = x\n[losses]\ncurll = 1\n")
    assert cli.main(["--output", str(tmp_path / "out"), "train", str(path)]) == cli.EXIT_CONFIG
    assert "losses.curll" in capsys.readouterr().err


def test_search_settings_validation():
    with pytest.raises(ConfigError):
        cli.search_settings_from_flat({"search.run_fn": "sphere"})
    with pytest.raises(ConfigError) as info:
        cli.search_settings_from_flat({"search.losses": "curl", "search.popsize": "3"})
    assert info.value.field == "search.popsize"
    with pytest.raises(ConfigError):
        cli.search_settings_from_flat({"search.losses": "curl", "search.sphere.byol": "1"})


def test_exported_combo_roundtrips_through_train_parsing():
    combo = LossCombo(weights={"curl": 0.25, "byol": 3.5, "extract_a": 1e-3}, m1=87, m2=91)
    flat = C.parse_text(cli.export_combo(combo))
    cfg = cli.train_config_from_flat(flat)
    assert cfg.losses == combo
    assert (cfg.aug1.m, cfg.aug2.m) == (87, 91)


# train ------------------------------------------------------------------------

def test_train_writes_results_and_summary(tmp_path, capsys):
    path = write(tmp_path, "tiny.ini", TINY)
    assert cli.main(["--output", str(tmp_path / "out"), "train", str(path)]) == cli.EXIT_OK
    out = tmp_path / "out" / "tiny"
    rows = read_rows(out / "results.csv")
    assert {r["seed"] for r in rows} == {"0", "1"}
    # evaluations start once updates do (after init exploration)
    assert {r["env_step"] for r in rows} == {"0", "30"}
    summary = read_rows(out / "summary.csv")
    assert len(summary) == 1 and summary[0]["n_seeds"] == "2"
    assert " ± " in summary[0]["summary"]
    assert "IQM ± std" in capsys.readouterr().out


def test_summary_iqm_and_std():
    rows = [{"agent_name": "a", "env": "e", "seed": s, "env_step": step, "eval_return": float(s * 10 + step)}
            for s in range(4) for step in (0, 5)]
    (s,) = cli.summarize(rows)
    # final scores 5, 15, 25, 35
    assert s["iqm"] == 20.0
    assert s["std"] == pytest.approx(12.909944487358056)
    assert s["summary"] == "20.000 ± 12.910"


def test_train_rerun_is_byte_identical(tmp_path):
    path = write(tmp_path, "tiny.ini", TINY.replace("seeds = 0, 1", "seeds = 3"))
    for root in ("a", "b"):
        assert cli.main(["--output", str(tmp_path / root), "train", str(path)]) == 0
    for name in ("results.csv", "summary.csv", "seeds/results_seed3.csv"):
        assert (tmp_path / "a/tiny" / name).read_bytes() == (tmp_path / "b/tiny" / name).read_bytes()


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path / "envroot"))
    path = write(tmp_path, "tiny.ini", TINY)
    assert cli.main(["train", str(path), "--seeds", "5"]) == 0
    rows = read_rows(tmp_path / "envroot/tiny/results.csv")
    assert {r["seed"] for r in rows} == {"5"}


def test_name_collision_with_different_config(tmp_path):
    a = write(tmp_path, "a.ini", TINY.replace("seeds = 0, 1", "seeds = 0"))
    b = write(tmp_path, "b.ini", TINY.replace("seeds = 0, 1", "seeds = 0").replace("curl = 1.0", "curl = 0.5"))
    assert cli.main(["--output", str(tmp_path / "o"), "train", str(a)]) == 0
    assert cli.main(["--output", str(tmp_path / "o"), "train", str(b)]) == cli.EXIT_CONFIG


def test_diverged_seed_exits_with_runtime_code(tmp_path, monkeypatch):
    import sslrl.agent as agent_mod

    def boom(self, *a, **k):
        raise agent_mod.TrainingDivergedError("nan critic loss")

    monkeypatch.setattr(agent_mod.SacAgent, "sac_update", boom)
    path = write(tmp_path, "tiny.ini", TINY.replace("seeds = 0, 1", "seeds = 0").replace("curl = 1.0", "curl = 0"))
    assert cli.main(["--output", str(tmp_path / "o"), "train", str(path)]) == cli.EXIT_RUNTIME
    rows = read_rows(tmp_path / "o/tiny/results.csv")
    assert rows[-1]["status"] != "ok"


def test_missing_config_file(tmp_path):
    assert cli.main(["train", str(tmp_path / "nope.ini")]) == cli.EXIT_CONFIG


# evolve -------------------------------------------------------------------------

def test_evolve_writes_log_and_best_combo(tmp_path):
    path = write(tmp_path, "s.ini", SPHERE)
    assert cli.main(["--output", str(tmp_path / "o"), "evolve", str(path)]) == 0
    out = tmp_path / "o/sphere"
    recs = [json.loads(line) for line in (out / "search.jsonl").read_text().splitlines()]
    assert max(r["generation"] for r in recs) == 4
    cfg = cli.train_config_from_flat(C.load(out / "best_combo.ini"))
    assert set(cfg.losses.weights) == {"curl", "byol", "ae"}


def test_evolve_interrupted_then_resumed(tmp_path):
    path = write(tmp_path, "s.ini", SPHERE)
    assert cli.main(["--output", str(tmp_path / "full"), "evolve", str(path)]) == 0
    assert cli.main(["--output", str(tmp_path / "part"), "evolve", str(path), "--stop-after", "2"]) == 0
    assert cli.main(["--output", str(tmp_path / "part"), "evolve", str(path)]) == 0
    for name in ("search.jsonl", "best_combo.ini"):
        assert (tmp_path / "part/sphere" / name).read_bytes() == (tmp_path / "full/sphere" / name).read_bytes()


def test_evolve_zero_generations(tmp_path):
    path = write(tmp_path, "s.ini", SPHERE.replace("generations = 4", "generations = 0"))
    assert cli.main(["--output", str(tmp_path / "o"), "evolve", str(path)]) == 0
    recs = [json.loads(line) for line in (tmp_path / "o/sphere/search.jsonl").read_text().splitlines()]
    assert {r["generation"] for r in recs} == {0}
    assert sum(r["type"] == "eval" for r in recs) == 8


# report -------------------------------------------------------------------------

def fake_results(path, agent, env, finals, total=30):
    rows = []
    for seed, final in enumerate(finals):
        for step in (0, total // 2, total):
            rows.append({"agent_name": agent, "env": env, "seed": seed, "env_step": step,
                         "eval_return": final * step / total, "status": "ok"})
    from sslrl.trainer import write_results_csv

    write_results_csv(path, rows)


def test_report_two_agents_relative_scores_sum_to_zero(tmp_path):
    fake_results(tmp_path / "a/results.csv", "A", "point_reacher", [1.0, 2.0, 3.0])
    fake_results(tmp_path / "b/results.csv", "B", "point_reacher", [5.0, 6.0, 7.0])
    assert cli.main(["report", str(tmp_path)]) == 0
    rel = read_rows(tmp_path / "report/relative_score.csv")
    assert [r["agent_name"] for r in rel] == ["A", "B"]
    assert abs(sum(float(r["relative_score"]) for r in rel)) < 1e-12
    scores = read_rows(tmp_path / "report/scores.csv")
    assert {r["agent_name"]: float(r["iqm"]) for r in scores} == {"A": 2.0, "B": 6.0}
    assert (tmp_path / "report/curve_point_reacher.png").exists()


def test_report_curve_spans_all_env_steps(tmp_path, monkeypatch):
    fake_results(tmp_path / "results.csv", "A", "point_reacher", [1.0, 2.0], total=300)
    seen = []
    monkeypatch.setattr(cli, "_save_fig", lambda fig, path: seen.append(fig.axes[0].lines[0].get_xdata()))
    cli.plot_curves(cli.read_results_csv(tmp_path / "results.csv"), tmp_path)
    assert min(seen[0]) == 0 and max(seen[0]) == 300


def test_report_from_iqm_table(tmp_path):
    out = tmp_path / "rep"
    assert cli.main(["report", str(tmp_path), "--out", str(out), "--iqm-table", str(TABLE)]) == 0
    rel = {r["agent_name"]: float(r["relative_score"]) for r in read_rows(out / "relative_score_from_iqm_table.csv")}
    printed = {r["agent"]: float(r["relative_score"]) for r in read_rows(TABLE)}
    assert rel.keys() == printed.keys()
    assert max(abs(rel[a] - printed[a]) for a in rel) <= 0.1


def test_report_empty_dir_is_input_error(tmp_path):
    (tmp_path / "empty").mkdir()
    assert cli.main(["report", str(tmp_path / "empty")]) == cli.EXIT_INPUT
    assert cli.main(["report", str(tmp_path / "missing")]) == cli.EXIT_INPUT


def test_report_is_regenerated_byte_identically(tmp_path):
    fake_results(tmp_path / "a/results.csv", "A", "e1", [1.0, 2.0, 4.0])
    fake_results(tmp_path / "b/results.csv", "B", "e1", [3.0, 3.5, 5.0])
    from sslrl.evalkit import RepresentationReport, write_reports

    write_reports(tmp_path / "a/repr_report.csv",
                  [RepresentationReport(100, 0.5, 0.4, 0.3, 0.2), RepresentationReport(200, 0.6, 0.5, 0.4, 0.1)])
    assert cli.main(["report", str(tmp_path), "--out", str(tmp_path / "r1")]) == 0
    assert cli.main(["report", str(tmp_path), "--out", str(tmp_path / "r2")]) == 0
    names = sorted(p.name for p in (tmp_path / "r1").iterdir())
    assert "metrics.png" in names and "relative_score.csv" in names
    assert names == sorted(p.name for p in (tmp_path / "r2").iterdir())
    for name in names:
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()


# probe --------------------------------------------------------------------------

def test_probe_over_checkpoints(tmp_path):
    text = TINY.replace("seeds = 0, 1", "seeds = 0\ncheckpoints = true\nsave_replay = true")
    path = write(tmp_path, "tiny.ini", text)
    assert cli.main(["--output", str(tmp_path / "o"), "train", str(path)]) == 0
    # a second run with another seed donates the held-out dataset
    assert cli.main(["--output", str(tmp_path / "o2"), "train", str(path), "--seeds", "1"]) == 0
    ckpts = sorted((tmp_path / "o/tiny/checkpoints").glob("*.pt"))
    assert ckpts
    args = ["--output", str(tmp_path / "o"), "probe", str(path), "--epochs", "5"]
    for c in ckpts:
        args += ["--checkpoint", str(c)]
    args += ["--dataset", str(tmp_path / "o/tiny/replay/seed0.npz"), "--dataset", str(tmp_path / "o2/tiny/replay/seed1.npz")]
    assert cli.main(args) == 0
    rows = read_rows(tmp_path / "o/tiny/repr_report.csv")
    assert len(rows) == len(ckpts)
    steps = [int(r["update_step"]) for r in rows]
    assert steps == sorted(steps)
    for r in rows:
        assert 0.0 <= float(r["orthogonality"]) <= 1.0
        assert 0.0 <= float(r["diversity"]) <= 1.0


def test_probe_needs_two_datasets(tmp_path):
    path = write(tmp_path, "tiny.ini", TINY)
    args = ["probe", str(path), "--checkpoint", "x.pt", "--dataset", "d.npz"]
    assert cli.main(args) == cli.EXIT_CONFIG
