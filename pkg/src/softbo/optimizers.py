"""Bayesian optimization, CEM and random search over a shared evaluation budget."""

from __future__ import annotations

import csv
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import gp as gpmod
from .acquisition import AcquisitionConfig, maximize

METHODS = ("bo-lei", "bo-ucb", "cem", "random")


class BudgetExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class TrialRecord:
    method: str
    seed: int
    n: int
    theta: tuple
    J: float
    best_so_far: float
    wall_time_ms: float
    fallback: bool = False


class BudgetedObjective:
    """Counts evaluations, refuses calls past the budget and logs one record per call.

    ``wall_time_ms`` is the cumulative episode (robot) time, ``episode_ms`` per
    trial, so that record files are reproducible byte for byte.
    """

    def __init__(self, fn: Callable[[np.ndarray], float], budget: int, method: str = "",
                 seed: int = 0, episode_ms: float = 0.0):
        if budget < 1:
            raise ValueError("budget must be >= 1")
        self.fn = fn
        self.budget = int(budget)
        self.method = method
        self.seed = seed
        self.episode_ms = float(episode_ms)
        self.records: list[TrialRecord] = []
        self._fallback_next = False

    @property
    def evaluations_used(self) -> int:
        return len(self.records)

    @property
    def remaining(self) -> int:
        return self.budget - len(self.records)

    @property
    def best(self) -> float:
        return self.records[-1].best_so_far if self.records else -math.inf

    def best_record(self) -> TrialRecord:
        """Argmax over observed J; earliest wins ties."""
        if not self.records:
            raise ValueError("no evaluations yet")
        return max(self.records, key=lambda r: (r.J, -r.n))

    def mark_fallback(self):
        self._fallback_next = True

    def __call__(self, theta) -> float:
        if self.remaining <= 0:
            raise BudgetExhausted(f"budget of {self.budget} evaluations exhausted")
        theta = np.asarray(theta, float).ravel()
        J = float(self.fn(theta))
        n = len(self.records) + 1
        best = max(self.best, J)
        self.records.append(TrialRecord(self.method, self.seed, n, tuple(theta.tolist()), J, best,
                                        n * self.episode_ms, self._fallback_next))
        self._fallback_next = False
        return J


class NoisyObjective:
    """Adds Gaussian observation noise to an objective."""

    def __init__(self, fn: Callable[[np.ndarray], float], sigma: float, rng: np.random.Generator):
        if sigma < 0:
            raise ValueError("sigma must be non-negative")
        self.fn = fn
        self.sigma = sigma
        self.rng = rng

    def __call__(self, theta) -> float:
        return float(self.fn(theta)) + self.sigma * float(self.rng.standard_normal())


def method_rng(seed: int, method: str) -> np.random.Generator:
    """Independent stream per (seed, method)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(method.encode())]))


def default_refit_every(budget: int) -> int:
    return 1 if budget <= 200 else 5


@dataclass
class BayesOptLog:
    """Per-run diagnostics, kept out of the record stream."""

    fits: int = 0
    fallbacks: list = field(default_factory=list)
    hyperparams: gpmod.KernelHyperparams | None = None


def bayesopt(obj: BudgetedObjective, acq: AcquisitionConfig, D: int, rng: np.random.Generator,
             restarts: int = gpmod.DEFAULT_RESTARTS, refit_every: int | None = None,
             log: BayesOptLog | None = None, n_init: int | None = None) -> list[TrialRecord]:
    """``n_init`` (default D+1) uniform initial trials, then acquisition-driven trials until the budget runs out.

    Hyperparameters are refit every ``refit_every`` acquisitions (default: every
    one, or every 5 for budgets over 200); in between the GP is only
    re-conditioned on the new data.  A GP numerical failure makes that trial a
    uniform random proposal.
    """
    n_init = D + 1 if n_init is None else int(n_init)
    if n_init < 1:
        raise ValueError("n_init must be >= 1")
    if obj.remaining <= n_init:
        raise ValueError(f"budget must exceed the {n_init} initial trials")
    refit_every = default_refit_every(obj.budget) if refit_every is None else refit_every
    log = BayesOptLog() if log is None else log
    init_rng, fit_rng, acq_rng, fallback_rng = rng.spawn(4)
    for x in init_rng.random((n_init, D)):
        obj(x)
    hp = None
    it = 0
    while obj.remaining > 0:
        X = np.array([r.theta for r in obj.records])
        y = np.array([r.J for r in obj.records])
        ts = gpmod.TrainingSet(X, y)
        try:
            if hp is None or it % refit_every == 0:
                extra = () if hp is None else (hp.to_log_vector(),)
                model = gpmod.fit(ts, restarts, fit_rng.spawn(1)[0], extra_starts=extra)
                log.fits += 1
            else:
                model = gpmod.FittedGP.condition(ts, hp)
            hp = model.hyperparams
            cfg = acq.with_incumbent(float(y.max())) if acq.kind == "logei" else acq
            x = maximize(model, cfg, acq_rng.spawn(1)[0])
        except gpmod.NumericalFailure as exc:
            log.fallbacks.append((obj.evaluations_used + 1, str(exc)))
            obj.mark_fallback()
            x = fallback_rng.random(D)
            hp = None
        obj(x)
        it += 1
    log.hyperparams = hp
    return obj.records


def elite_count(pop: int, elite_frac: float) -> int:
    return max(1, int(round(elite_frac * pop)))


def cem(obj: BudgetedObjective, D: int, rng: np.random.Generator, pop: int = 50,
        elite_frac: float = 0.2, var_floor: float = 1e-6,
        trace: list | None = None) -> list[TrialRecord]:
    """Cross-entropy method with a diagonal Gaussian, clamped to the unit box.

    The initial D+1 uniform samples set the starting mean and count toward the
    budget; the starting standard deviation is 0.5 per dimension.

    Parameters
    ----------
    trace : list, optional
        Receives ``(mean, var)`` after initialization and after every
        completed generation.
    """
    if obj.remaining < pop:
        raise ValueError("budget must be >= pop")
    n_elite = elite_count(pop, elite_frac)
    init = rng.random((D + 1, D))
    for x in init:
        if obj.remaining == 0:
            return obj.records
        obj(x)
    mean = init.mean(0)
    var = np.full(D, 0.25)
    if trace is not None:
        trace.append((mean.copy(), var.copy()))
    while obj.remaining > 0:
        cand = np.clip(mean + np.sqrt(var) * rng.standard_normal((pop, D)), 0.0, 1.0)
        vals = []
        for x in cand:
            if obj.remaining == 0:
                break
            vals.append(obj(x))
        if len(vals) < pop:
            break
        elite = cand[np.argsort(-np.asarray(vals), kind="stable")[:n_elite]]
        mean = elite.mean(0)
        var = np.maximum(elite.var(0), var_floor)
        if trace is not None:
            trace.append((mean.copy(), var.copy()))
    return obj.records


def random_search(obj: BudgetedObjective, D: int, rng: np.random.Generator,
                  pop: int = 50) -> list[TrialRecord]:
    """Uniform samples in batches of ``pop`` until the budget runs out."""
    while obj.remaining > 0:
        batch = rng.random((pop, D))
        for x in batch[: obj.remaining]:
            obj(x)
    return obj.records


def run_method(method: str, obj: BudgetedObjective, D: int, seed: int,
               settings: dict | None = None, log: BayesOptLog | None = None) -> list[TrialRecord]:
    """Dispatch by method id with a method-tagged seed."""
    settings = dict(settings or {})
    rng = method_rng(seed, method)
    if method in ("bo-lei", "bo-ucb"):
        acq_keys = {"kappa", "candidate_count", "refine_count", "refine_steps"}
        acq = AcquisitionConfig(kind="logei" if method == "bo-lei" else "ucb",
                                **{k: v for k, v in settings.items() if k in acq_keys})
        return bayesopt(obj, acq, D, rng, restarts=settings.get("restarts", gpmod.DEFAULT_RESTARTS),
                        refit_every=settings.get("refit_every"), log=log,
                        n_init=settings.get("n_init"))
    if method == "cem":
        return cem(obj, D, rng, pop=settings.get("pop", 50),
                   elite_frac=settings.get("elite_frac", 0.2))
    if method == "random":
        return random_search(obj, D, rng, pop=settings.get("pop", 50))
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


RECORD_FIELDS = ("method", "seed", "n")


def write_records_csv(path, records: list[TrialRecord]) -> None:
    """Schema: method, seed, n, theta_0..theta_{D-1}, J, best_so_far, wall_time_ms."""
    D = len(records[0].theta) if records else 0
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*RECORD_FIELDS, *(f"theta_{i}" for i in range(D)), "J", "best_so_far",
                    "wall_time_ms"])
        for r in records:
            w.writerow([r.method, r.seed, r.n, *(repr(float(t)) for t in r.theta), repr(r.J),
                        repr(r.best_so_far), repr(float(r.wall_time_ms))])


def read_records_csv(path) -> list[TrialRecord]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    D = sum(1 for h in header if h.startswith("theta_"))
    out = []
    for row in body:
        out.append(TrialRecord(row[0], int(row[1]), int(row[2]),
                               tuple(float(v) for v in row[3:3 + D]), float(row[3 + D]),
                               float(row[4 + D]), float(row[5 + D])))
    return out
