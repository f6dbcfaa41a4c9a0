"""UCB and log expected-improvement acquisitions and their maximization."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfcx, log_ndtr
from scipy.stats import norm

from .gp import FittedGP, PosteriorPrediction

_C1 = 0.5 * math.log(2.0 * math.pi)
_C2 = 0.5 * math.log(0.5 * math.pi)
_SQRT2 = math.sqrt(2.0)
# below this the erfcx form loses digits to cancellation; the Mills-ratio series
# (four terms) is exact to double precision there
_ASYMPTOTIC_Z = -1e3

KINDS = ("ucb", "logei")


@dataclass(frozen=True)
class AcquisitionConfig:
    kind: str = "logei"
    kappa: float = 0.9
    incumbent: float | None = None
    candidate_count: int = 512
    refine_count: int = 10
    refine_steps: int = 50
    initial_step: float = 0.1
    min_step: float = 1e-6

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown acquisition kind {self.kind!r}; expected one of {KINDS}")
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")
        if not self.candidate_count >= self.refine_count >= 1:
            raise ValueError("need candidate_count >= refine_count >= 1")
        if self.refine_steps < 1:
            raise ValueError("refine_steps must be positive")

    def with_incumbent(self, value: float) -> "AcquisitionConfig":
        return AcquisitionConfig(self.kind, self.kappa, float(value), self.candidate_count,
                                 self.refine_count, self.refine_steps, self.initial_step,
                                 self.min_step)


def ucb_values(mean, variance, kappa: float) -> np.ndarray:
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    return np.asarray(mean, float) + math.sqrt(kappa) * np.sqrt(np.asarray(variance, float))


def ucb(pred: PosteriorPrediction, kappa: float) -> float:
    """mu + sqrt(kappa) * sigma."""
    if pred.variance < 0:
        raise ValueError("variance must be non-negative")
    return float(ucb_values(pred.mean, pred.variance, kappa))


def _log1mexp(x):
    # log(1 - exp(x)) for x < 0
    x = np.asarray(x, float)
    return np.where(x > -math.log(2.0), np.log(-np.expm1(x)), np.log1p(-np.exp(x)))


def log_h(z) -> np.ndarray:
    """log(phi(z) + z Phi(z)), stable for very negative z."""
    z = np.asarray(z, float)
    out = np.empty_like(z)
    hi = z > -1.0
    mid = (~hi) & (z >= _ASYMPTOTIC_Z)
    lo = z < _ASYMPTOTIC_Z
    if np.any(hi):
        zh = z[hi]
        phi = np.exp(-0.5 * zh * zh - _C1)
        out[hi] = np.log(phi + zh * np.exp(log_ndtr(zh)))
    if np.any(mid):
        zm = z[mid]
        out[mid] = (-0.5 * zm * zm - _C1
                    + _log1mexp(np.log(erfcx(-zm / _SQRT2) * np.abs(zm)) + _C2))
    if np.any(lo):
        zl = z[lo]
        w = 1.0 / (zl * zl)
        out[lo] = (-0.5 * zl * zl - _C1 + np.log(w)
                   + np.log1p(w * (-3.0 + w * (15.0 - 105.0 * w))))
    return out


def log_ei_values(mean, variance, incumbent: float) -> np.ndarray:
    """log E[max(X - F, 0)] for X ~ N(mean, variance)."""
    mean, var = np.broadcast_arrays(np.atleast_1d(np.asarray(mean, float)),
                                    np.asarray(variance, float))
    sigma = np.sqrt(np.maximum(var, 0.0))
    out = np.empty(mean.shape)
    pos = sigma > 0
    if np.any(pos):
        z = (mean[pos] - incumbent) / sigma[pos]
        out[pos] = log_h(z) + np.log(sigma[pos])
    if np.any(~pos):
        imp = mean[~pos] - incumbent
        with np.errstate(divide="ignore"):
            out[~pos] = np.where(imp > 0, np.log(np.maximum(imp, 0.0)), -np.inf)
    return out


def log_ei(pred: PosteriorPrediction, incumbent: float) -> float:
    if pred.variance < 0:
        raise ValueError("variance must be non-negative")
    return float(log_ei_values(pred.mean, pred.variance, incumbent)[0])


def expected_improvement(mean, variance, incumbent: float) -> np.ndarray:
    """Plain closed-form EI (underflows for very negative z)."""
    sigma = np.sqrt(np.asarray(variance, float))
    z = (np.asarray(mean, float) - incumbent) / sigma
    return sigma * (z * norm.cdf(z) + norm.pdf(z))


def acquisition_values(gp: FittedGP, cfg: AcquisitionConfig, Q) -> np.ndarray:
    mu, var = gp.predict_batch(Q)
    if cfg.kind == "ucb":
        return ucb_values(mu, var, cfg.kappa)
    incumbent = cfg.incumbent
    if incumbent is None:
        incumbent = float(np.max(gp.training_set.targets))
    return log_ei_values(mu, var, incumbent)


def _pattern_search(f, x, fx, cfg: AcquisitionConfig):
    """Compass search from each row of x, all starts advanced together."""
    x = x.copy()
    fx = fx.copy()
    R, D = x.shape
    step = np.full(R, cfg.initial_step)
    eye = np.eye(D)
    for _ in range(cfg.refine_steps):
        active = np.flatnonzero(step >= cfg.min_step)
        if active.size == 0:
            break
        base = x[active]
        s = step[active][:, None, None]
        polls = np.concatenate([base[:, None, :] + s * eye, base[:, None, :] - s * eye], axis=1)
        np.clip(polls, 0.0, 1.0, out=polls)
        vals = f(polls.reshape(-1, D)).reshape(active.size, 2 * D)
        best = np.argmax(vals, axis=1)
        bv = vals[np.arange(active.size), best]
        better = bv > fx[active]
        mv = active[better]
        x[mv] = polls[better, best[better]]
        fx[mv] = bv[better]
        step[active[~better]] *= 0.5
    return x, fx


def maximize(gp: FittedGP, cfg: AcquisitionConfig, rng: np.random.Generator) -> np.ndarray:
    """Candidate sweep over the unit box, then pattern-search refinement of the best few."""
    D = gp.training_set.dims
    f = lambda Q: acquisition_values(gp, cfg, Q)  # noqa: E731
    cand = rng.random((cfg.candidate_count, D))
    vals = f(cand)
    order = np.argsort(-vals, kind="stable")[: cfg.refine_count]
    x, fx = _pattern_search(f, cand[order], vals[order], cfg)
    i = int(np.argmax(fx))
    if fx[i] >= vals[order[0]]:
        return x[i]
    return cand[order[0]]
