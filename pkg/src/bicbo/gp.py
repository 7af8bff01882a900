"""Univariate kriging with a constant mean.

The fitted model carries the generalized-least-squares mean, the maximum
likelihood process variance and a Cholesky factorization of the correlation
matrix.  Prediction includes the inflation term for the estimated mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.linalg import solve_triangular

from .kernel import (
    CorrMatrix,
    IllConditionedError,
    JITTER_START,
    KernelParams,
    SqDiffs,
    corr_matrix,
    cross_corr,
    factorize,
)

LOG_RATE_BOUNDS = (-3.0, 3.0)
N_STARTS = 8
_START_LEVELS = np.linspace(-2.5, 2.5, N_STARTS)
_STEP0 = 1.0
_STEP_MIN = 0.02
_FALLBACK_RATE = 1.0


@dataclass(frozen=True, eq=False)
class Dataset:
    """Design points with paired objective and constraint observations."""

    X: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        z = np.asarray(self.z, dtype=float).ravel()
        if not (X.shape[0] == y.size == z.size):
            raise ValueError("X, y and z must have the same number of rows")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(z))):
            raise ValueError("observations must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True, eq=False)
class UniGPModel:
    X: np.ndarray
    obs: np.ndarray
    kernel: KernelParams
    cm: CorrMatrix
    mu: float
    sigma2: float
    alpha: np.ndarray  # R^-1 (obs - mu 1)

    @property
    def one_r_one(self) -> float:
        return float(self.cm.ones_solve.sum())


def gls_mean(cm: CorrMatrix, obs: np.ndarray) -> float:
    ri1 = cm.ones_solve
    return float(ri1 @ obs / ri1.sum())


def fit_gp(X, obs, kernel: KernelParams) -> UniGPModel:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    obs = np.asarray(obs, dtype=float).ravel()
    if X.shape[0] != obs.size:
        raise ValueError("X and obs must have the same number of rows")
    cm = corr_matrix(X, kernel)
    mu = gls_mean(cm, obs)
    resid = obs - mu
    alpha = cm.solve(resid)
    sigma2 = max(0.0, float(resid @ alpha) / obs.size)
    return UniGPModel(X, obs, kernel.with_jitter(cm.jitter), cm, mu, sigma2, alpha)


class Prediction(NamedTuple):
    mean: np.ndarray
    var: np.ndarray
    n_clamped: int


def _prediction_terms(cm: CorrMatrix, r: np.ndarray):
    """Return (r' R^-1 r, 1' R^-1 r) for each row of ``r``."""
    v = solve_triangular(cm.L, r.T, lower=True, check_finite=False)
    quad = np.einsum("ij,ij->j", v, v)
    lin = r @ cm.ones_solve
    return quad, lin


def shrinkage(cm: CorrMatrix, r: np.ndarray) -> np.ndarray:
    """Unit-variance posterior factor 1 - r'R^-1 r + (1 - 1'R^-1 r)^2 / 1'R^-1 1."""
    quad, lin = _prediction_terms(cm, r)
    return 1.0 - quad + (1.0 - lin) ** 2 / cm.ones_solve.sum()


def gp_predict(model: UniGPModel, Xnew, clamp: bool = True) -> Prediction:
    """Posterior means and variances at the rows of ``Xnew``."""
    r = cross_corr(Xnew, model.X, model.kernel)
    mean = model.mu + r @ model.alpha
    var = model.sigma2 * shrinkage(model.cm, r)
    neg = var < 0
    if clamp:
        var = np.where(neg, 0.0, var)
    return Prediction(mean, var, int(neg.sum()))


def gp_posterior(model: UniGPModel, x) -> tuple[float, float]:
    pred = gp_predict(model, np.atleast_1d(np.asarray(x, dtype=float))[None, :])
    return float(pred.mean[0]), float(pred.var[0])


def profile_loglik(cm: CorrMatrix, obs: np.ndarray) -> float:
    """Gaussian log-likelihood with the mean and variance replaced by their MLEs."""
    n = obs.size
    mu = gls_mean(cm, obs)
    resid = obs - mu
    sigma2 = float(resid @ cm.solve(resid)) / n
    if not sigma2 > 0:
        return -math.inf
    return -0.5 * n * (math.log(2 * math.pi * sigma2) + 1.0) - 0.5 * cm.logdet


def gaussian_loglik(cm: CorrMatrix, obs: np.ndarray, mu: float, sigma2: float) -> float:
    """Exact log-density of ``obs`` under N(mu 1, sigma2 R)."""
    n = obs.size
    resid = obs - mu
    quad = float(resid @ cm.solve(resid)) / sigma2
    return -0.5 * (n * math.log(2 * math.pi * sigma2) + cm.logdet + quad)


class KernelEstimate(NamedTuple):
    params: KernelParams
    loglik: float
    fallback: bool


def default_starts(d: int) -> list[np.ndarray]:
    return [np.full(d, level) for level in _START_LEVELS]


def maximize_log_rates(
    objective: Callable[[np.ndarray], float],
    d: int,
    starts=None,
) -> tuple[np.ndarray | None, float]:
    """Multi-start compass search over log10 rates inside ``LOG_RATE_BOUNDS``.

    Each start moves to the best improving +/- step along any coordinate and
    halves the step when none improves, stopping below ``_STEP_MIN``.  Values
    are cached on the visited lattice.  Returns ``(None, -inf)`` if no finite
    objective value was ever seen.
    """
    lo, hi = LOG_RATE_BOUNDS
    cache: dict[tuple, float] = {}

    def f(theta):
        key = tuple(np.round(theta, 9))
        if key not in cache:
            try:
                val = objective(10.0 ** theta)
            except (IllConditionedError, FloatingPointError, ValueError):
                val = -math.inf
            cache[key] = val if math.isfinite(val) else -math.inf
        return cache[key]

    best_theta, best_val = None, -math.inf
    for start in starts if starts is not None else default_starts(d):
        theta = np.clip(np.asarray(start, dtype=float), lo, hi)
        val = f(theta)
        step = _STEP0
        while step >= _STEP_MIN:
            cand_theta, cand_val = None, val
            for k in range(d):
                for sign in (1.0, -1.0):
                    trial = theta.copy()
                    trial[k] = min(hi, max(lo, trial[k] + sign * step))
                    tv = f(trial)
                    if tv > cand_val:
                        cand_theta, cand_val = trial, tv
            if cand_theta is None:
                step /= 2
            else:
                theta, val = cand_theta, cand_val
        if val > best_val:
            best_theta, best_val = theta, val
    return best_theta, best_val


def estimate_kernel(X, obs, jitter: float = JITTER_START, starts=None) -> KernelEstimate:
    """Rates maximizing the profile log-likelihood of one output."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    obs = np.asarray(obs, dtype=float).ravel()
    d = X.shape[1]
    fallback = KernelEstimate(KernelParams.isotropic(d, _FALLBACK_RATE, jitter), -math.inf, True)
    if np.ptp(obs) == 0:
        return fallback
    diffs = SqDiffs(X)

    def objective(rates):
        return profile_loglik(factorize(diffs.kernel(rates), jitter), obs)

    theta, val = maximize_log_rates(objective, d, starts)
    if theta is None:
        return fallback
    return KernelEstimate(KernelParams(tuple(10.0 ** theta), jitter), val, False)
