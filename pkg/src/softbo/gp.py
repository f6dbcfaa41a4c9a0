"""Exact GP regression with an ARD Matern-5/2 kernel.

Inputs live in the unit box.  Targets are standardized before fitting and
predictions are returned in objective units.  Hyperparameters are optimized
in log space by L-BFGS-B with Gamma log-density penalties.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, lapack, solve_triangular
from scipy.optimize import minimize
from numba import njit
from scipy.special import gammaln

SQRT5 = math.sqrt(5.0)
LOG_2PI = math.log(2.0 * math.pi)

# Gamma(shape, rate) log-density penalties
LENGTHSCALE_PRIOR = (3.0, 6.0)
SIGNAL_PRIOR = (2.0, 0.15)
NOISE_PRIOR = (1.1, 0.05)

LENGTHSCALE_BOUNDS = (1e-3, 1e3)
SIGNAL_BOUNDS = (1e-3, 1e3)
NOISE_BOUNDS = (1e-6, 10.0)

JITTER_REL = 1e-8
JITTER_MAX_REL = 1e-2

DEFAULT_RESTARTS = 8
MAXITER = 100
GTOL = 1e-6


class NumericalFailure(ArithmeticError):
    """Cholesky factorization failed even at maximum jitter."""


@dataclass(frozen=True)
class KernelHyperparams:
    lengthscales: tuple
    signal_variance: float
    noise_variance: float = 0.0

    def __post_init__(self):
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))
        if not ls or not all(v > 0 and math.isfinite(v) for v in ls):
            raise ValueError(f"lengthscales must be positive and finite, got {ls}")
        if not self.signal_variance > 0:
            raise ValueError("signal_variance must be positive")
        if not self.noise_variance >= 0:
            raise ValueError("noise_variance must be non-negative")

    @property
    def dims(self) -> int:
        return len(self.lengthscales)

    def to_log_vector(self) -> np.ndarray:
        noise = max(self.noise_variance, NOISE_BOUNDS[0])
        return np.log(np.r_[self.lengthscales, self.signal_variance, noise])

    @classmethod
    def from_log_vector(cls, x) -> "KernelHyperparams":
        e = np.exp(np.asarray(x, float))
        return cls(tuple(e[:-2]), e[-2], e[-1])

    def to_dict(self) -> dict:
        return {"lengthscales": list(self.lengthscales),
                "signal_variance": self.signal_variance,
                "noise_variance": self.noise_variance}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelHyperparams":
        return cls(tuple(d["lengthscales"]), d["signal_variance"], d["noise_variance"])

    def describe(self) -> str:
        ls = ", ".join(f"{v:.4g}" for v in self.lengthscales)
        return (f"lengthscales=[{ls}], signal_variance={self.signal_variance:.4g}, "
                f"noise_variance={self.noise_variance:.4g}")


@dataclass(frozen=True)
class TrainingSet:
    """Inputs (N, D) in the unit box and raw targets with their standardization."""

    inputs: np.ndarray
    targets: np.ndarray
    mean: float = field(init=False)
    scale: float = field(init=False)

    def __post_init__(self):
        X = np.array(self.inputs, dtype=float, ndmin=2)
        y = np.array(self.targets, dtype=float).ravel()
        if X.shape[0] < 1 or X.shape[0] != y.shape[0]:
            raise ValueError(f"need N >= 1 matching rows, got X {X.shape}, y {y.shape}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("inputs and targets must be finite")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", y)
        mean = float(y.mean())
        scale = float(y.std(ddof=1)) if y.size >= 2 else 1.0
        if not scale > 0:
            scale = 1.0
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scale", scale)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dims(self) -> int:
        return self.inputs.shape[1]

    @property
    def standardized(self) -> np.ndarray:
        return (self.targets - self.mean) / self.scale

    def append(self, x, y) -> "TrainingSet":
        return TrainingSet(np.vstack([self.inputs, np.atleast_2d(x)]),
                           np.r_[self.targets, np.atleast_1d(y)])


@dataclass(frozen=True)
class PosteriorPrediction:
    mean: float
    variance: float

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


def _check_hp(hp: KernelHyperparams, dims: int):
    if hp.dims != dims:
        raise ValueError(f"hyperparameters have {hp.dims} lengthscales, data has {dims} dims")


def _matern_from_r(r, sf2):
    s = SQRT5 * r
    return sf2 * (1.0 + s + s * s / 3.0) * np.exp(-s)


def matern52_ard(a, b, hp: KernelHyperparams) -> float:
    """Matern-5/2 covariance between two points."""
    a = np.asarray(a, float).ravel()
    b = np.asarray(b, float).ravel()
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("kernel inputs must be finite")
    _check_hp(hp, a.size)
    d2 = float(np.sum(((a - b) / np.asarray(hp.lengthscales)) ** 2))
    return float(_matern_from_r(math.sqrt(d2), hp.signal_variance))


@njit(cache=True)
def _cross(As, Bs, sf2):
    n, m = As.shape[0], Bs.shape[0]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            r2 = 0.0
            for k in range(As.shape[1]):
                t = As[i, k] - Bs[j, k]
                r2 += t * t
            s = SQRT5 * np.sqrt(r2)
            out[i, j] = sf2 * (1.0 + s + s * s / 3.0) * np.exp(-s)
    return out


def kernel_matrix(A, B, hp: KernelHyperparams) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, float))
    B = np.atleast_2d(np.asarray(B, float))
    ls = np.asarray(hp.lengthscales)
    return _cross(np.ascontiguousarray(A / ls), np.ascontiguousarray(B / ls),
                  hp.signal_variance)


def _gram(X, hp: KernelHyperparams) -> np.ndarray:
    # direct differences keep the diagonal exactly sigma_f^2 and the matrix symmetric
    diff = (X[:, None, :] - X[None, :, :]) / np.asarray(hp.lengthscales)
    r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return _matern_from_r(r, hp.signal_variance)


def _cholesky(A: np.ndarray, base: float, hp: KernelHyperparams, jitter: float | None = None,
              diag: float = 0.0):
    """Lower Cholesky of A + (diag + jitter) I with escalation; returns (L, jitter)."""
    if jitter is not None:
        levels = [jitter]
    else:
        levels = []
        rel = JITTER_REL
        while rel <= JITTER_MAX_REL * (1 + 1e-12):
            levels.append(rel * base)
            rel *= 10.0
    idx = np.diag_indices_from(A)
    d0 = A[idx].copy()
    for jit in levels:
        B = A.copy()
        B[idx] = d0 + (diag + jit)
        L, info = lapack.dpotrf(B, lower=1, clean=1, overwrite_a=1)
        if info == 0:
            return L, jit
    raise NumericalFailure(f"Cholesky failed at jitter {levels[-1]:.3g} for {hp.describe()}")


def _gamma_logpdf(x, shape, rate):
    return shape * math.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(x) - rate * x


def log_prior(hp: KernelHyperparams) -> tuple[float, np.ndarray]:
    """Sum of Gamma log-densities and its gradient w.r.t. the log-parameters."""
    ls = np.asarray(hp.lengthscales)
    noise = max(hp.noise_variance, NOISE_BOUNDS[0])
    value = float(np.sum(_gamma_logpdf(ls, *LENGTHSCALE_PRIOR))
                  + _gamma_logpdf(hp.signal_variance, *SIGNAL_PRIOR)
                  + _gamma_logpdf(noise, *NOISE_PRIOR))
    grad = np.r_[(LENGTHSCALE_PRIOR[0] - 1.0) - LENGTHSCALE_PRIOR[1] * ls,
                 (SIGNAL_PRIOR[0] - 1.0) - SIGNAL_PRIOR[1] * hp.signal_variance,
                 (NOISE_PRIOR[0] - 1.0) - NOISE_PRIOR[1] * noise]
    return value, grad


@njit(cache=True)
def _gram_terms(Xs, sf2):
    """Gram matrix of the scaled inputs ``Xs = X / l`` and the
    lengthscale-derivative factor (5/3) sf2 (1+s) e^-s."""
    n, d = Xs.shape
    K = np.empty((n, n))
    G = np.empty((n, n))
    for i in range(n):
        K[i, i] = sf2
        G[i, i] = (5.0 / 3.0) * sf2
        for j in range(i):
            r2 = 0.0
            for k in range(d):
                t = Xs[i, k] - Xs[j, k]
                r2 += t * t
            s = SQRT5 * np.sqrt(r2)
            e = np.exp(-s)
            kij = sf2 * (1.0 + s + s * s / 3.0) * e
            gij = (5.0 / 3.0) * sf2 * (1.0 + s) * e
            K[i, j] = kij
            K[j, i] = kij
            G[i, j] = gij
            G[j, i] = gij
    return K, G


@njit(cache=True)
def _grad_terms(X, ls, alpha, Kinv_upper, K, G):
    """Traces 0.5 tr(W dK) with W = alpha alpha^T - K^-1.

    ``Kinv_upper`` holds K^-1 in its upper triangle (row-major walk).
    """
    n, d = X.shape
    gl = np.zeros(d)
    wk = 0.0
    trw = 0.0
    for j in range(n):
        wjj = alpha[j] * alpha[j] - Kinv_upper[j, j]
        trw += wjj
        wk += wjj * K[j, j]
        for i in range(j + 1, n):
            w = 2.0 * (alpha[i] * alpha[j] - Kinv_upper[j, i])
            wk += w * K[j, i]
            wg = w * G[j, i]
            for k in range(d):
                t = X[i, k] - X[j, k]
                gl[k] += wg * t * t
    for k in range(d):
        gl[k] = 0.5 * gl[k] / (ls[k] * ls[k])
    return gl, 0.5 * wk, trw


class _LMLCache:
    """Per-dataset quantities reused across hyperparameter evaluations."""

    def __init__(self, X, y):
        self.X = np.ascontiguousarray(X)
        self.y = y


def _lml(cache: _LMLCache, hp: KernelHyperparams, prior: bool = True,
         jitter: float | None = None):
    X, y = cache.X, cache.y
    n = X.shape[0]
    ls = np.asarray(hp.lengthscales)
    sf2 = hp.signal_variance
    K, G = _gram_terms(np.ascontiguousarray(X / ls), sf2)
    L, jit = _cholesky(K, sf2, hp, jitter, hp.noise_variance)
    alpha = cho_solve((L, True), y)
    value = (-0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * LOG_2PI)

    Kinv, info = lapack.dpotri(L, lower=1)
    if info != 0:
        raise NumericalFailure(f"inverse failed for {hp.describe()}")
    # dpotri returns Fortran order; its transpose is a row-major upper triangle
    grad_ls, grad_sf2, trw = _grad_terms(X, ls, alpha, np.ascontiguousarray(Kinv.T), K, G)
    if jitter is None:
        # the jitter scales with sf2, so it rides along with the signal variance
        grad_sf2 += 0.5 * jit * trw
    grad = np.r_[grad_ls, grad_sf2, 0.5 * hp.noise_variance * trw]
    if prior:
        pv, pg = log_prior(hp)
        value += pv
        grad = grad + pg
    return float(value), grad


def log_marginal_likelihood(ts: TrainingSet, hp: KernelHyperparams, prior: bool = True,
                            jitter: float | None = None) -> tuple[float, np.ndarray]:
    """Penalized LML of the standardized targets and its gradient.

    The gradient is w.r.t. ``[log l_1..log l_D, log sigma_f^2, log sigma_eps^2]``.
    ``jitter`` fixes the diagonal jitter instead of the relative escalation.
    """
    _check_hp(hp, ts.dims)
    return _lml(_LMLCache(ts.inputs, ts.standardized), hp, prior, jitter)


@dataclass(frozen=True)
class FittedGP:
    training_set: TrainingSet
    hyperparams: KernelHyperparams
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float
    lml: float = float("nan")

    @classmethod
    def condition(cls, ts: TrainingSet, hp: KernelHyperparams, jitter: float | None = None,
                  lml: float = float("nan")) -> "FittedGP":
        """Posterior for fixed hyperparameters (no optimization)."""
        _check_hp(hp, ts.dims)
        K = _gram(ts.inputs, hp)
        L, jit = _cholesky(K, hp.signal_variance, hp, jitter, hp.noise_variance)
        alpha = cho_solve((L, True), ts.standardized)
        L.setflags(write=False)
        alpha.setflags(write=False)
        return cls(ts, hp, L, alpha, jit, lml)

    def predict_batch(self, Q, clamp: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance (objective units) at the rows of Q."""
        Q = np.atleast_2d(np.asarray(Q, float))
        if not np.all(np.isfinite(Q)):
            raise ValueError("query must be finite")
        ts = self.training_set
        Ks = kernel_matrix(Q, ts.inputs, self.hyperparams)
        mu = Ks @ self.alpha
        V = Ks @ self._chol_inv_t
        var = self.hyperparams.signal_variance - np.einsum("ij,ij->i", V, V)
        if clamp:
            var = np.maximum(var, 0.0)
        return mu * ts.scale + ts.mean, var * ts.scale ** 2

    @functools.cached_property
    def _chol_inv_t(self) -> np.ndarray:
        # (L^-1)^T, so that predict_batch is one matrix product
        n = self.chol.shape[0]
        return np.ascontiguousarray(
            solve_triangular(self.chol, np.eye(n), lower=True, check_finite=False).T)

    def to_dict(self) -> dict:
        ts = self.training_set
        return {"hyperparams": self.hyperparams.to_dict(),
                "jitter": self.jitter,
                "lml": self.lml,
                "inputs": ts.inputs.tolist(),
                "targets": ts.targets.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FittedGP":
        ts = TrainingSet(np.array(d["inputs"]), np.array(d["targets"]))
        return cls.condition(ts, KernelHyperparams.from_dict(d["hyperparams"]),
                             jitter=d["jitter"], lml=d.get("lml", float("nan")))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def predict(gp: FittedGP, query) -> PosteriorPrediction:
    q = np.asarray(query, float).ravel()
    mu, var = gp.predict_batch(q[None, :])
    return PosteriorPrediction(float(mu[0]), float(var[0]))


def _bounds(dims):
    lo = np.log(np.r_[[LENGTHSCALE_BOUNDS[0]] * dims, SIGNAL_BOUNDS[0], NOISE_BOUNDS[0]])
    hi = np.log(np.r_[[LENGTHSCALE_BOUNDS[1]] * dims, SIGNAL_BOUNDS[1], NOISE_BOUNDS[1]])
    return lo, hi


def sample_prior(dims: int, rng: np.random.Generator) -> np.ndarray:
    """A log-parameter start point drawn from the priors, clipped to the bounds."""
    ls = rng.gamma(LENGTHSCALE_PRIOR[0], 1.0 / LENGTHSCALE_PRIOR[1], size=dims)
    sf2 = rng.gamma(SIGNAL_PRIOR[0], 1.0 / SIGNAL_PRIOR[1])
    noise = rng.gamma(NOISE_PRIOR[0], 1.0 / NOISE_PRIOR[1])
    lo, hi = _bounds(dims)
    return np.clip(np.log(np.r_[ls, sf2, noise]), lo, hi)


def fit(ts: TrainingSet, restarts: int = DEFAULT_RESTARTS, rng: np.random.Generator | None = None,
        extra_starts=()) -> FittedGP:
    """Multi-start maximization of the penalized LML.

    Each restart draws its start from its own spawned sub-stream of ``rng``.
    ``extra_starts`` are additional log-parameter start points tried after the
    random restarts (e.g. the previous fit).  Ties go to the lowest index.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    cache = _LMLCache(ts.inputs, ts.standardized)
    dims = ts.dims
    lo, hi = _bounds(dims)
    bounds = list(zip(lo, hi))

    def objective(x):
        try:
            v, g = _lml(cache, KernelHyperparams.from_log_vector(x))
        except (NumericalFailure, ValueError):
            return 1e25, np.zeros_like(x)
        if not np.isfinite(v):
            return 1e25, np.zeros_like(x)
        return -v, -g

    starts = [sample_prior(dims, sub) for sub in rng.spawn(restarts)]
    starts += [np.clip(np.asarray(s, float), lo, hi) for s in extra_starts]
    best_x, best_v = None, -np.inf
    for x0 in starts:
        res = minimize(objective, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": MAXITER, "gtol": GTOL})
        v = -float(res.fun)
        if res.fun < 1e25 and v > best_v:
            best_x, best_v = np.clip(res.x, lo, hi), v
    if best_x is None:
        raise NumericalFailure(f"all {len(starts)} restarts failed numerically")
    return FittedGP.condition(ts, KernelHyperparams.from_log_vector(best_x), lml=best_v)
