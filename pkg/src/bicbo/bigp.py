"""Bivariate kriging with a separable covariance.

Objective and constraint share one correlation matrix ``R``; their joint
covariance over the design is ``Sigma (x) R`` with a 2x2 between-output
matrix ``Sigma``.  Means and variances are estimated as in the univariate
model, the output correlation by one-dimensional likelihood maximization.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cholesky, cho_solve, solve_triangular

from .gp import Dataset, KernelEstimate, gls_mean, maximize_log_rates, profile_loglik, shrinkage
from .kernel import (
    CorrMatrix,
    JITTER_START,
    KernelParams,
    SqDiffs,
    corr_matrix,
    cross_corr,
    factorize,
    kron_cov,
    output_cov,
)

RHO_MAX = 0.999
RHO_POST_MAX = 0.999
# relative posterior variance below which a point counts as interpolated
# (scaled up with the nugget, which leaves ~jitter * sigma^2 at training points)
_INTERP_TOL = 1e-8
_GRID = 41
_GOLDEN_TOL = 1e-10
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True, eq=False)
class BiGPModel:
    data: Dataset
    kernel: KernelParams
    cm: CorrMatrix
    mu_y: float
    mu_z: float
    sigma2_y: float
    sigma2_z: float
    rho: float
    kron_L: np.ndarray  # lower Cholesky factor of Sigma (x) R
    beta: np.ndarray  # (Sigma (x) R)^-1 [y - mu_y 1; z - mu_z 1]
    rho_fallback: bool = False

    @property
    def sigma(self) -> np.ndarray:
        return output_cov(self.sigma2_y, self.sigma2_z, self.rho)

    def with_rho(self, rho: float) -> "BiGPModel":
        """Same fit with the output correlation replaced (solves recomputed)."""
        L, beta = _kron_solve(self.data, self.cm, self.mu_y, self.mu_z, self.sigma2_y, self.sigma2_z, rho)
        return replace(self, rho=float(rho), kron_L=L, beta=beta, rho_fallback=False)


@dataclass(frozen=True)
class BiPosterior:
    """Joint predictive law of (y(x), z(x)); fields may be scalars or arrays."""

    mean_y: float
    mean_z: float
    var_y: float
    var_z: float
    cov_yz: float
    n_clamped: int = field(default=0, compare=False)  # negative variances set to 0

    @property
    def rho(self):
        """Posterior correlation, clamped to +-0.999 and 0 where either variance vanishes."""
        vy = np.asarray(self.var_y, dtype=float)
        vz = np.asarray(self.var_z, dtype=float)
        denom = np.sqrt(vy * vz)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(denom > 0, np.asarray(self.cov_yz) / denom, 0.0)
        r = np.clip(r, -RHO_POST_MAX, RHO_POST_MAX)
        return float(r) if r.ndim == 0 else r

    def swapped(self) -> "BiPosterior":
        return BiPosterior(self.mean_z, self.mean_y, self.var_z, self.var_y, self.cov_yz, self.n_clamped)


def _residuals(data: Dataset, mu_y: float, mu_z: float) -> np.ndarray:
    return np.column_stack([data.y - mu_y, data.z - mu_z])


def _floor_var(s2: float, obs: np.ndarray) -> float:
    return max(s2, 1e-14 * max(1.0, float(np.mean(obs * obs))))


def joint_loglik(
    mu_y: float,
    mu_z: float,
    sigma2_y: float,
    sigma2_z: float,
    rho: float,
    data: Dataset,
    cm: CorrMatrix,
    dense: bool = False,
) -> float:
    """Exact log-density of the stacked vector (y_1..y_n, z_1..z_n).

    The default path uses det(Sigma (x) R) = det(Sigma)^n det(R)^2 and
    (Sigma (x) R)^-1 = Sigma^-1 (x) R^-1; ``dense=True`` builds and factorizes
    the full 2n x 2n covariance instead.
    """
    n = data.n
    E = _residuals(data, mu_y, mu_z)
    if dense:
        C = kron_cov(sigma2_y, sigma2_z, rho, cm.R)
        L = cholesky(C, lower=True, check_finite=False)
        e = np.concatenate([E[:, 0], E[:, 1]])
        w = solve_triangular(L, e, lower=True, check_finite=False)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        return float(-0.5 * (2 * n * math.log(2 * math.pi) + logdet + w @ w))
    S = output_cov(sigma2_y, sigma2_z, rho)
    det_s = sigma2_y * sigma2_z * (1.0 - rho * rho)
    if not det_s > 0:
        return -math.inf
    M = E.T @ cm.solve(E)  # 2x2 matrix of residual cross products
    quad = float(np.sum(np.linalg.inv(S) * M))
    logdet = n * math.log(det_s) + 2.0 * cm.logdet
    return -0.5 * (2 * n * math.log(2 * math.pi) + logdet + quad)


def rho_closed_form(
    data: Dataset, mu_y: float, mu_z: float, s2y: float, s2z: float, cm: CorrMatrix
) -> float:
    """Stationary point of the joint likelihood in rho with the other parameters held fixed."""
    E = _residuals(data, mu_y, mu_z)
    cross = float(E[:, 0] @ cm.solve(E[:, 1])) / data.n
    return float(np.clip(cross / math.sqrt(s2y * s2z), -1.0, 1.0))


def _golden_max(f, lo: float, hi: float, tol: float = _GOLDEN_TOL) -> float:
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    return (a + b) / 2


def estimate_rho(data: Dataset, mu_y, mu_z, s2y, s2z, cm: CorrMatrix) -> tuple[float, bool]:
    """Maximize the joint likelihood over rho in [-0.999, 0.999].

    A 41-point grid scan brackets the maximum and golden-section search refines
    it.  Returns ``(rho, fallback)``; on a non-finite likelihood the closed-form
    stationary point (clamped) is used and ``fallback`` is True.
    """

    def f(r):
        return joint_loglik(mu_y, mu_z, s2y, s2z, r, data, cm)

    grid = np.linspace(-RHO_MAX, RHO_MAX, _GRID)
    vals = np.array([f(r) for r in grid])
    if not np.all(np.isfinite(vals)):
        closed = rho_closed_form(data, mu_y, mu_z, s2y, s2z, cm)
        return float(np.clip(closed, -RHO_MAX, RHO_MAX)), True
    i = int(np.argmax(vals))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, _GRID - 1)]
    rho = _golden_max(f, lo, hi)
    if not math.isfinite(f(rho)):
        closed = rho_closed_form(data, mu_y, mu_z, s2y, s2z, cm)
        return float(np.clip(closed, -RHO_MAX, RHO_MAX)), True
    return float(np.clip(rho, -RHO_MAX, RHO_MAX)), False


def _kron_solve(data, cm, mu_y, mu_z, s2y, s2z, rho):
    E = _residuals(data, mu_y, mu_z)
    L = cholesky(kron_cov(s2y, s2z, rho, cm.R), lower=True, check_finite=False)
    beta = cho_solve((L, True), np.concatenate([E[:, 0], E[:, 1]]), check_finite=False)
    return L, beta


def fit_bigp(data: Dataset, kernel: KernelParams) -> BiGPModel:
    if data.n < 3:
        raise ValueError("the bivariate model needs at least 3 observations")
    cm = corr_matrix(data.X, kernel)
    mu_y = gls_mean(cm, data.y)
    mu_z = gls_mean(cm, data.z)
    E = _residuals(data, mu_y, mu_z)
    s2y = _floor_var(float(E[:, 0] @ cm.solve(E[:, 0])) / data.n, data.y)
    s2z = _floor_var(float(E[:, 1] @ cm.solve(E[:, 1])) / data.n, data.z)
    rho, fallback = estimate_rho(data, mu_y, mu_z, s2y, s2z, cm)
    if fallback:
        warnings.warn("rho likelihood not finite; using the closed-form stationary point", RuntimeWarning)
    L, beta = _kron_solve(data, cm, mu_y, mu_z, s2y, s2z, rho)
    return BiGPModel(
        data, kernel.with_jitter(cm.jitter), cm, mu_y, mu_z, s2y, s2z, rho, L, beta, fallback
    )


def _finish(mean_y, mean_z, var_y, var_z, cov, S, tol):
    interp = np.minimum(var_y / S[0, 0], var_z / S[1, 1]) < tol
    cov = np.where(interp, 0.0, cov)
    n_neg = int(np.sum(var_y < 0) + np.sum(var_z < 0))
    var_y = np.maximum(var_y, 0.0)
    var_z = np.maximum(var_z, 0.0)
    bound = np.sqrt(var_y * var_z)
    cov = np.clip(cov, -bound, bound)
    return mean_y, mean_z, var_y, var_z, cov, n_neg


def bigp_predict(model: BiGPModel, Xnew, dense: bool = False) -> BiPosterior:
    """Joint posterior at each row of ``Xnew`` (array-valued fields).

    The dense path works with the explicit 2n x 2n factorization.  The default
    path uses that the cross-covariance vectors are (Sigma e_i) (x) r, so every
    quadratic form collapses to Sigma_ij * r' R^-1 r and each mean reduces to a
    univariate kriging predictor on the shared R.
    """
    r = cross_corr(Xnew, model.data.X, model.kernel)
    S = model.sigma
    cm = model.cm
    lin = r @ cm.ones_solve
    infl = (1.0 - lin) ** 2 / cm.ones_solve.sum()
    if dense:
        ry = np.hstack([S[0, 0] * r, S[0, 1] * r])
        rz = np.hstack([S[1, 0] * r, S[1, 1] * r])
        vy = solve_triangular(model.kron_L, ry.T, lower=True, check_finite=False)
        vz = solve_triangular(model.kron_L, rz.T, lower=True, check_finite=False)
        mean_y = model.mu_y + ry @ model.beta
        mean_z = model.mu_z + rz @ model.beta
        var_y = S[0, 0] - np.einsum("ij,ij->j", vy, vy) + S[0, 0] * infl
        var_z = S[1, 1] - np.einsum("ij,ij->j", vz, vz) + S[1, 1] * infl
        cov = S[0, 1] - np.einsum("ij,ij->j", vy, vz) + S[0, 1] * infl
    else:
        E = _residuals(model.data, model.mu_y, model.mu_z)
        A = cm.solve(E)
        mean_y = model.mu_y + r @ A[:, 0]
        mean_z = model.mu_z + r @ A[:, 1]
        unit = shrinkage(cm, r)
        var_y, var_z, cov = S[0, 0] * unit, S[1, 1] * unit, S[0, 1] * unit
    tol = max(_INTERP_TOL, 10.0 * cm.jitter)
    return BiPosterior(*_finish(mean_y, mean_z, var_y, var_z, cov, S, tol))


def bigp_posterior(model: BiGPModel, x, dense: bool = False) -> BiPosterior:
    p = bigp_predict(model, np.atleast_1d(np.asarray(x, dtype=float))[None, :], dense)
    vals = (float(np.asarray(v)[0]) for v in (p.mean_y, p.mean_z, p.var_y, p.var_z, p.cov_yz))
    return BiPosterior(*vals, n_clamped=p.n_clamped)


def estimate_shared_kernel(X, y, z, jitter: float = JITTER_START, starts=None) -> KernelEstimate:
    """Shared rates maximizing the sum of the two univariate profile log-likelihoods."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    outputs = [np.asarray(o, dtype=float).ravel() for o in (y, z)]
    outputs = [o for o in outputs if np.ptp(o) > 0]
    d = X.shape[1]
    fallback = KernelEstimate(KernelParams.isotropic(d, 1.0, jitter), -math.inf, True)
    if not outputs:
        return fallback
    diffs = SqDiffs(X)

    def objective(rates):
        cm = factorize(diffs.kernel(rates), jitter)
        return sum(profile_loglik(cm, o) for o in outputs)

    theta, val = maximize_log_rates(objective, d, starts)
    if theta is None:
        return fallback
    return KernelEstimate(KernelParams(tuple(10.0 ** theta), jitter), val, False)

