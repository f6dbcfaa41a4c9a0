import json
import re
import shutil
from pathlib import Path

import numpy as np
import pytest

from softbo import cli, runner
from softbo.arm import ArmModel, SimulationDiverged
from softbo.config import ConfigError, build_config, load_config, load_flat
from softbo.optimizers import TrialRecord, read_records_csv, write_records_csv
from softbo.report import build_table, checkpoint, parse_data_comment, plot, summarize, table


def quiet(*a, **k):
    pass


def config(tmp_path, name="run", **extra):
    flat = load_flat(overrides=[
        "run.methods=[random, cem]", "run.P_values=[2]", "run.budgets=[4, 10]",
        "run.seeds=[0, 1]", "method.cem.pop=5", f"run.output={tmp_path / name}",
        *(f"{k}={v}" for k, v in extra.items())])
    return build_config(flat)


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("h")
    cfg = config(tmp)
    run_dir, failed = runner.run(cfg, workers=1, log=quiet)
    assert not failed
    return cfg, run_dir


def test_single_cell_csv_has_budget_rows(tmp_path):
    flat = load_flat(overrides=["run.methods=[random]", "run.P_values=[2]", "run.budgets=[10]",
                                "run.seeds=[0]", f"run.output={tmp_path / 'one'}"])
    run_dir, failed = runner.run(build_config(flat), workers=1, log=quiet)
    assert not failed
    assert len((run_dir / "records.csv").read_text().splitlines()) == 11
    assert len((run_dir / "cells" / "random_P2_s0" / "best_commands.csv").read_text()
               .splitlines()) == 11


def test_run_writes_every_cell(small_run):
    cfg, run_dir = small_run
    for cid in cfg.cell_ids():
        d = run_dir / "cells" / cid
        assert len(read_records_csv(d / "records.csv")) == 10
        info = json.loads((d / "info.json").read_text())
        assert info["best"]["J"] == max(r.J for r in read_records_csv(d / "records.csv"))
    assert len((run_dir / "records.csv").read_text().splitlines()) == 1 + 10 * len(cfg.cell_ids())


def test_resume_matches_uninterrupted(small_run, tmp_path):
    _, full = small_run
    cfg = config(tmp_path, "resumed")
    run_dir, _ = runner.run(cfg, workers=1, log=quiet)
    # simulate an interruption: one cell never finished, merged outputs missing
    manifest = json.loads((run_dir / "manifest.json").read_text())
    manifest["cells"].pop("cem_P2_s1")
    (run_dir / "manifest.json").write_text(json.dumps(manifest))
    shutil.rmtree(run_dir / "cells" / "cem_P2_s1")
    (run_dir / "records.csv").unlink()
    logs = []
    _, failed = runner.run(cfg, workers=1, log=logs.append)
    assert not failed
    assert logs[0] == "resuming: 3 completed cells skipped"
    assert logs[1:] == ["cem_P2_s1: done"]
    for name in ["records.csv", "cells/cem_P2_s1/records.csv", "cells/cem_P2_s1/info.json",
                 "cells/cem_P2_s1/best_commands.csv"]:
        assert (run_dir / name).read_bytes() == (full / name).read_bytes()


def test_moved_run_directory_resumes(small_run, tmp_path):
    cfg, run_dir = small_run
    moved = tmp_path / "moved"
    shutil.copytree(run_dir, moved)
    logs = []
    runner.run(build_config(dict(cfg.flat, **{"run.output": str(moved)})), workers=1,
               log=logs.append)
    assert logs == ["resuming: 4 completed cells skipped"]


def test_rerun_skips_everything(small_run):
    cfg, run_dir = small_run
    before = (run_dir / "records.csv").read_bytes()
    logs = []
    runner.run(cfg, workers=1, log=logs.append)
    assert logs == ["resuming: 4 completed cells skipped"]
    assert (run_dir / "records.csv").read_bytes() == before


def test_changed_config_refused(small_run):
    cfg, run_dir = small_run
    with pytest.raises(ConfigError):
        runner.run(build_config(dict(cfg.flat, **{"run.seeds": [0, 1, 2]})), workers=1, log=quiet)


def test_manifest_lists_all_defaults(small_run):
    _, run_dir = small_run
    m = json.loads((run_dir / "manifest.json").read_text())
    assert ArmModel.from_dict(m["model"]) == ArmModel()
    assert set(m["model"]["joints"][0]) >= {"stiffness", "damping", "torque_gain", "disk_count"}
    assert m["task"]["dt"] == 0.005 and m["task"]["H"] == 10
    assert set(m["methods"]) == {"random", "cem"}
    assert m["methods"]["cem"]["pop"] == 5 and m["methods"]["cem"]["elite_frac"] == 0.2
    assert "." in m["code_version"]
    for key in ("gp", "budget_folding", "seed_derivation", "config"):
        assert key in m


def test_other_code_version_refused(small_run, tmp_path):
    cfg, run_dir = small_run
    copy = tmp_path / "old"
    shutil.copytree(run_dir, copy)
    m = json.loads((copy / "manifest.json").read_text())
    m["code_version"] = "0.0.0+000000000000"
    (copy / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(ConfigError, match="code version"):
        runner.run(build_config(dict(cfg.flat, **{"run.output": str(copy)})), workers=1, log=quiet)


def test_parallel_workers_match_serial(small_run, tmp_path):
    cfg, run_dir = small_run
    par = build_config(dict(cfg.flat, **{"run.output": str(tmp_path / "par")}))
    out, failed = runner.run(par, workers=2, log=quiet)
    assert not failed
    assert (out / "records.csv").read_bytes() == (run_dir / "records.csv").read_bytes()


def test_table_statistics_recomputed_from_records(small_run):
    cfg, run_dir = small_run
    t = build_table(run_dir)
    for (m, b, P), (mean, std, n) in t.cells.items():
        finals = [max(r.J for r in read_records_csv(run_dir / "cells" / f"{m}_P{P}_s{s}" /
                                                    "records.csv")[:b]) for s in cfg.seeds]
        assert abs(mean - np.mean(finals)) <= 1e-12
        assert abs(std - np.std(finals, ddof=1)) <= 1e-12
        assert n == 2
    assert len(t.cells) == 2 * 2 * 1


def _hand_run(tmp_path, finals):
    cfg = build_config(load_flat(overrides=[
        "run.methods=[random]", "run.P_values=[2]", "run.budgets=[1]",
        f"run.seeds={list(range(len(finals)))}", f"run.output={tmp_path}"]))
    tmp_path.mkdir(parents=True, exist_ok=True)
    manifest = runner.manifest_core(cfg)
    for s, J in enumerate(finals):
        cid = f"random_P2_s{s}"
        (tmp_path / "cells" / cid).mkdir(parents=True)
        write_records_csv(tmp_path / "cells" / cid / "records.csv",
                          [TrialRecord("random", s, 1, (0.5,) * 11, J, J, 5000.0)])
        manifest["cells"][cid] = {"status": "done"}
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    return tmp_path


def test_hand_statistics(tmp_path):
    t, text = table(_hand_run(tmp_path / "r", [3.0, 5.0, 4.0]))
    mean, std, n = t.cells[("random", 1, 2)]
    assert (mean, std, n) == (4.0, 1.0, 3)
    assert "4.000 +/- 1.000 *" in text
    assert (tmp_path / "r" / "table.csv").exists()


def test_single_seed_std_zero(tmp_path):
    t, _ = table(_hand_run(tmp_path / "r", [2.5]))
    assert t.cells[("random", 1, 2)][:2] == (2.5, 0.0)
    assert summarize([7.0]) == (7.0, 0.0)


def test_checkpoint_is_running_max():
    rng = np.random.default_rng(0)
    J = rng.normal(size=500)
    recs = [TrialRecord("x", 0, i + 1, (), float(v), float(J[: i + 1].max()), 0.0)
            for i, v in enumerate(J)]
    assert checkpoint(recs, 100) == J[:100].max() == recs[99].best_so_far
    with pytest.raises(ValueError):
        checkpoint(recs[:50], 100)


def test_missing_cells_give_partial_table(small_run, tmp_path):
    cfg, run_dir = small_run
    part = tmp_path / "part"
    shutil.copytree(run_dir, part)
    m = json.loads((part / "manifest.json").read_text())
    for s in (0, 1):
        m["cells"].pop(f"cem_P2_s{s}")
    (part / "manifest.json").write_text(json.dumps(m))
    t, text = table(part)
    assert "missing" in text and "2 of 4 cells" in text
    assert cli.main(["table", str(part)]) == cli.EXIT_PARTIAL


def test_plots_are_byte_identical(small_run):
    _, run_dir = small_run
    first = {p.name: p.read_bytes() for p in plot(run_dir, log=quiet)}
    assert set(first) == {"best_so_far_P2.svg", "tip_speed_P2.svg"}
    second = {p.name: p.read_bytes() for p in plot(run_dir, log=quiet)}
    assert first == second


def _polylines(svg):
    out = []
    for g in re.finditer(r'<g id="line2d_\d+">\s*<path d="([^"]+)"', svg):
        nums = [float(v) for v in re.findall(r"-?\d+(?:\.\d+)?", g.group(1))]
        out.append(np.array(nums).reshape(-1, 2))
    return out


def test_best_so_far_polyline_monotone(small_run):
    _, run_dir = small_run
    plot(run_dir, log=quiet)
    svg = (run_dir / "best_so_far_P2.svg").read_text()
    curves = [p for p in _polylines(svg) if len(p) == 10]
    assert len(curves) == 2
    for pts in curves:
        assert np.all(np.diff(pts[:, 0]) > 0)
        assert np.all(np.diff(pts[:, 1]) <= 1e-9)    # svg y grows downward
    rows = parse_data_comment(svg)
    assert rows[0] == ["method", "n", "mean", "min", "max"] and len(rows) == 21


def test_empty_run_plots_nothing(tmp_path):
    cfg = config(tmp_path, "empty")
    d = Path(cfg.output)
    d.mkdir()
    (d / "manifest.json").write_text(json.dumps(runner.manifest_core(cfg)))
    notes = []
    assert plot(d, log=notes.append) == []
    assert "nothing to plot" in notes[0]
    assert not list(d.glob("*.svg"))


def test_replay_writes_trajectory(small_run, tmp_path):
    _, run_dir = small_run
    out = tmp_path / "traj.csv"
    assert cli.main(["replay", str(run_dir), "--cell", "cem_P2_s0", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 11
    assert cli.main(["replay", str(run_dir), "--cell", "bo-lei_P2_s0"]) == cli.EXIT_CONFIG


def test_config_errors_list_every_problem(tmp_path):
    with pytest.raises(ConfigError) as exc:
        load_config(overrides=["run.methods=[sgd]", "task.H=0", "bogus.key=1", "run.seeds=[]"])
    text = " | ".join(exc.value.problems)
    for bit in ("sgd", "task", "bogus.key", "run.seeds"):
        assert bit in text


def test_override_precedence(tmp_path):
    f = tmp_path / "c.yaml"
    f.write_text("task:\n  kind: hammer\nrun.seeds: [3]\n")
    cfg = load_config(f, ["run.seeds=[7, 8]"])
    assert cfg.task.kind == "hammer" and cfg.task.object_mass == 2.0
    assert cfg.seeds == (7, 8)
    assert load_config(f).seeds == (3,)


def test_cli_config_error_exit_code(tmp_path, capsys):
    assert cli.main(["run", "--override", "run.methods=[nope]"]) == cli.EXIT_CONFIG
    assert "nope" in capsys.readouterr().err
    assert cli.main(["run", "--config", str(tmp_path / "absent.yaml")]) == cli.EXIT_CONFIG
    assert cli.main(["table", str(tmp_path / "absent")]) == cli.EXIT_CONFIG


def test_cli_run_success(tmp_path, monkeypatch):
    monkeypatch.setenv(runner.WORKERS_ENV, "1")
    args = ["run", "--override", "run.methods=[random]", "--override", "run.P_values=[2]",
            "--override", "run.budgets=[3]", "--override", "run.seeds=[0]",
            "--override", f"run.output={tmp_path / 'ok'}"]
    assert cli.main(args) == cli.EXIT_OK
    assert cli.main(["table", str(tmp_path / "ok")]) == cli.EXIT_OK


def test_cli_partial_failure_exit_code(tmp_path, monkeypatch):
    class Diverging(runner.PolicyEvaluator):
        def __call__(self, theta):
            raise SimulationDiverged(12, "forced")

    monkeypatch.setattr(runner, "PolicyEvaluator", Diverging)
    monkeypatch.setenv(runner.WORKERS_ENV, "1")
    args = ["run", "--override", "run.methods=[random]", "--override", "run.P_values=[2]",
            "--override", "run.budgets=[3]", "--override", "run.seeds=[0, 1]",
            "--override", f"run.output={tmp_path / 'bad'}"]
    assert cli.main(args) == cli.EXIT_PARTIAL
    m = json.loads((tmp_path / "bad" / "manifest.json").read_text())
    assert all(c["status"] == "failed" and "12" in c["error"] for c in m["cells"].values())


def test_worker_env(monkeypatch):
    monkeypatch.setenv(runner.WORKERS_ENV, "3")
    assert runner.worker_count() == 3
    monkeypatch.setenv(runner.WORKERS_ENV, "zero")
    with pytest.raises(ValueError):
        runner.worker_count()
    monkeypatch.delenv(runner.WORKERS_ENV)
    assert runner.worker_count() >= 1
