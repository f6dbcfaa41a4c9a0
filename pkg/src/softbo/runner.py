"""Experiment orchestration: one job per (method, P, seed) cell, resumable.

Run directory layout::

    manifest.json                 resolved config, every constant, code version, cell status
    records.csv                   all completed cells' trial records, in cell order
    timings.csv                   measured compute time per cell (not reproducible)
    cells/<cell>/records.csv      that cell's trial records
    cells/<cell>/best_commands.csv  pressure commands of the best observed policy
    cells/<cell>/info.json        best trial, GP fallbacks, final hyperparameters
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import acquisition, gp
from .arm.model import SimulationDiverged
from .config import ConfigError, ExperimentConfig, build_config, cell_id, parse_cell_id
from .episode import PolicyEvaluator
from .optimizers import (
    BayesOptLog,
    BudgetedObjective,
    NoisyObjective,
    default_refit_every,
    read_records_csv,
    run_method,
    write_records_csv,
)
from .policy import write_commands_csv

WORKERS_ENV = "SOFTBO_WORKERS"
MANIFEST = "manifest.json"


def code_version() -> str:
    """Package version plus a digest of the package sources."""
    h = hashlib.sha256()
    root = Path(__file__).parent
    for p in sorted(root.rglob("*.py")):
        h.update(str(p.relative_to(root)).encode())
        h.update(p.read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


def worker_count() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {env!r}") from None
        if n < 1:
            raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {env!r}")
        return n
    return os.cpu_count() or 1


def method_constants(cfg: ExperimentConfig) -> dict:
    """Every optimizer setting in effect, defaults included."""
    acq = dataclasses.asdict(acquisition.AcquisitionConfig())
    out = {}
    for m in cfg.methods:
        s = dict(m.settings)
        if m.id.startswith("bo-"):
            d = {k: acq[k] for k in ("candidate_count", "refine_count", "refine_steps",
                                      "initial_step", "min_step")}
            d["kind"] = "logei" if m.id == "bo-lei" else "ucb"
            if m.id == "bo-ucb":
                d["kappa"] = acq["kappa"]
            d.update(restarts=gp.DEFAULT_RESTARTS, n_init=cfg.task.dims + 1,
                     refit_every=default_refit_every(cfg.max_budget))
        elif m.id == "cem":
            d = {"pop": 50, "elite_frac": 0.2, "initial_sigma": 0.5, "var_floor": 1e-6,
                 "n_init": cfg.task.dims + 1}
        else:
            d = {"pop": 50}
        d.update({k: v for k, v in s.items() if v is not None})
        out[m.id] = d
    return out


def gp_constants() -> dict:
    return {
        "kernel": "matern52_ard",
        "lengthscale_prior_gamma": list(gp.LENGTHSCALE_PRIOR),
        "signal_variance_prior_gamma": list(gp.SIGNAL_PRIOR),
        "noise_variance_prior_gamma": list(gp.NOISE_PRIOR),
        "lengthscale_bounds": list(gp.LENGTHSCALE_BOUNDS),
        "signal_variance_bounds": list(gp.SIGNAL_BOUNDS),
        "noise_variance_bounds": list(gp.NOISE_BOUNDS),
        "jitter_rel": gp.JITTER_REL, "jitter_max_rel": gp.JITTER_MAX_REL,
        "lbfgs_maxiter": gp.MAXITER, "lbfgs_gtol": gp.GTOL,
    }


def manifest_core(cfg: ExperimentConfig) -> dict:
    return {
        "code_version": code_version(),
        "config": cfg.flat,
        "model": cfg.model().to_dict(),
        "task": cfg.task.to_dict(),
        "methods": method_constants(cfg),
        "gp": gp_constants(),
        "budget_folding": (f"each cell runs once to {cfg.max_budget} trials; the "
                           f"{list(cfg.budgets)} columns are checkpoints of that stream"),
        "seed_derivation": "SeedSequence([seed, crc32(method id)])",
        "wall_time_ms": "cumulative episode time (trial count x task duration)",
        "cells": {},
    }


def _json_dump(path: Path, obj) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    tmp.replace(path)


def load_manifest(run_dir) -> dict:
    p = Path(run_dir) / MANIFEST
    if not p.exists():
        raise FileNotFoundError(f"no {MANIFEST} in {run_dir}")
    return json.loads(p.read_text())


def config_from_manifest(manifest: dict) -> ExperimentConfig:
    return build_config(manifest["config"])


def _objective(cfg: ExperimentConfig, method: str, P: int, seed: int):
    ev = PolicyEvaluator(cfg.model(), cfg.task_for(P))
    fn = ev
    if cfg.noise_sigma > 0:
        ss = np.random.SeedSequence([seed, zlib.crc32(method.encode()), 1])
        fn = NoisyObjective(ev, cfg.noise_sigma, np.random.default_rng(ss))
    return ev, fn


def run_cell(flat: dict, cid: str, run_dir: str) -> dict:
    """Execute one cell and write its files; returns its manifest entry."""
    cfg = build_config(flat)
    method, P, seed = parse_cell_id(cid)
    out = Path(run_dir) / "cells" / cid
    out.mkdir(parents=True, exist_ok=True)
    ev, fn = _objective(cfg, method, P, seed)
    obj = BudgetedObjective(fn, cfg.max_budget, method, seed, episode_ms=1000.0 * cfg.task.duration)
    log = BayesOptLog()
    t0 = time.perf_counter()
    try:
        run_method(method, obj, ev.dims, seed, cfg.method(method).settings, log=log)
    except SimulationDiverged as exc:
        return {"status": "failed", "error": str(exc), "completed_trials": obj.evaluations_used,
                "seconds": time.perf_counter() - t0}
    elapsed = time.perf_counter() - t0
    write_records_csv(out / "records.csv", obj.records)
    best = obj.best_record()
    cmds, t_R = ev.commands(np.array(best.theta))
    write_commands_csv(out / "best_commands.csv", cmds)
    fallbacks = [r.n for r in obj.records if r.fallback]
    info = {
        "cell": cid, "method": method, "P": P, "seed": seed,
        "best": {"n": best.n, "J": best.J, "theta": list(best.theta), "release_step": t_R},
        "checkpoints": {str(b): obj.records[b - 1].best_so_far for b in cfg.budgets},
        "gp_fallback_trials": fallbacks,
        "gp_fits": log.fits,
        "final_hyperparams": None if log.hyperparams is None else log.hyperparams.to_dict(),
    }
    _json_dump(out / "info.json", info)
    return {"status": "done", "trials": len(obj.records), "gp_fallbacks": len(fallbacks),
            "seconds": elapsed}


def _cell_complete(run_dir: Path, cid: str, entry: dict | None, budget: int) -> bool:
    if not entry or entry.get("status") != "done":
        return False
    p = run_dir / "cells" / cid / "records.csv"
    return p.exists() and len(read_records_csv(p)) == budget


def merge_records(run_dir, cfg: ExperimentConfig, manifest: dict) -> None:
    run_dir = Path(run_dir)
    lines = []
    header = None
    for cid in cfg.cell_ids():
        if manifest["cells"].get(cid, {}).get("status") != "done":
            continue
        text = (run_dir / "cells" / cid / "records.csv").read_text().splitlines()
        header = header or text[0]
        lines.extend(text[1:])
    if header is not None:
        (run_dir / "records.csv").write_text("\n".join([header, *lines]) + "\n")


def _write_timings(run_dir: Path, manifest: dict) -> None:
    rows = ["cell,status,seconds"]
    for cid, e in sorted(manifest["cells"].items()):
        rows.append(f"{cid},{e.get('status')},{e.get('seconds', 0.0):.3f}")
    (run_dir / "timings.csv").write_text("\n".join(rows) + "\n")


def _comparable(flat: dict) -> dict:
    # the output path may move with the directory
    return {k: v for k, v in flat.items() if k != "run.output"}


def run(cfg: ExperimentConfig, workers: int | None = None, log=print) -> tuple[Path, list[str]]:
    """Run every missing cell; returns the run directory and the failed cell ids.

    Completed cells recorded in an existing manifest are skipped, so an
    interrupted run resumes where it stopped.  Manifest timing fields are
    kept out of the reproducible outputs (CSV and SVG).
    """
    run_dir = Path(cfg.output)
    run_dir.mkdir(parents=True, exist_ok=True)
    core = manifest_core(cfg)
    mpath = run_dir / MANIFEST
    if mpath.exists():
        old = json.loads(mpath.read_text())
        problems = []
        if _comparable(old.get("config", {})) != _comparable(core["config"]):
            problems.append(f"{run_dir} holds a run with a different config")
        if old.get("code_version") != core["code_version"]:
            problems.append(f"{run_dir} was written by code version {old.get('code_version')}")
        if problems:
            raise ConfigError(problems)
        core["cells"] = old.get("cells", {})
    manifest = core
    todo = [c for c in cfg.cell_ids()
            if not _cell_complete(run_dir, c, manifest["cells"].get(c), cfg.max_budget)]
    skipped = len(cfg.cell_ids()) - len(todo)
    if skipped:
        log(f"resuming: {skipped} completed cells skipped")
    _json_dump(mpath, manifest)
    workers = worker_count() if workers is None else workers

    def commit(cid, entry):
        manifest["cells"][cid] = entry
        _json_dump(mpath, manifest)
        log(f"{cid}: {entry['status']}" + (f" ({entry.get('error')})" if entry["status"] != "done" else ""))

    if workers <= 1 or len(todo) <= 1:
        for cid in todo:
            commit(cid, run_cell(cfg.flat, cid, str(run_dir)))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [(cid, pool.submit(run_cell, cfg.flat, cid, str(run_dir))) for cid in todo]
            for cid, fut in futures:
                try:
                    entry = fut.result()
                except Exception as exc:  # noqa: BLE001 - a crashed worker fails only its cell
                    entry = {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}
                commit(cid, entry)
    merge_records(run_dir, cfg, manifest)
    _write_timings(run_dir, manifest)
    failed = [c for c in cfg.cell_ids() if manifest["cells"].get(c, {}).get("status") != "done"]
    return run_dir, failed


def replay(run_dir, cid: str, out=None) -> Path:
    """Re-simulate a cell's best policy and export its trajectory CSV."""
    run_dir = Path(run_dir)
    cfg = config_from_manifest(load_manifest(run_dir))
    method, P, seed = parse_cell_id(cid)
    if cid not in cfg.cell_ids():
        raise KeyError(f"cell {cid!r} is not part of this run")
    records = read_records_csv(run_dir / "cells" / cid / "records.csv")
    best = max(records, key=lambda r: (r.J, -r.n))
    ev = PolicyEvaluator(cfg.model(), cfg.task_for(P))
    traj = ev.rollout(np.array(best.theta))
    out = Path(out) if out is not None else run_dir / "cells" / cid / "best_trajectory.csv"
    traj.write_csv(out)
    return out


__all__ = ["run", "run_cell", "replay", "merge_records", "load_manifest", "config_from_manifest",
           "worker_count", "code_version", "cell_id", "WORKERS_ENV"]
