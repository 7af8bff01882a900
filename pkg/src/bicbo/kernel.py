"""Squared-exponential correlation, correlation matrices and Kronecker covariance."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky

JITTER_START = 1e-10
JITTER_MAX = 1e-4


class IllConditionedError(LinAlgError):
    """Raised when a correlation matrix cannot be factorized even after jitter escalation."""


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box ``lower <= x <= upper``."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi) or not lo:
            raise ValueError("lower and upper must be non-empty and of equal length")
        if any(not a < b for a, b in zip(lo, hi)):
            raise ValueError(f"every lower bound must be below its upper bound: {lo} vs {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unit(cls, d: int) -> "Domain":
        return cls((0.0,) * d, (1.0,) * d)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def width(self) -> np.ndarray:
        return np.asarray(self.upper) - np.asarray(self.lower)

    def to_unit(self, X):
        return (np.asarray(X, dtype=float) - np.asarray(self.lower)) / self.width

    def from_unit(self, U):
        return np.asarray(self.lower) + np.asarray(U, dtype=float) * self.width

    def contains(self, x, tol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        slack = tol * self.width
        return bool(
            x.shape[-1] == self.dim
            and np.all(x >= np.asarray(self.lower) - slack)
            and np.all(x <= np.asarray(self.upper) + slack)
        )


@dataclass(frozen=True)
class KernelParams:
    """Per-dimension rates of exp(-sum_k rate_k (x_k - x'_k)^2) and a diagonal nugget."""

    rates: tuple
    jitter: float = JITTER_START

    def __post_init__(self):
        rates = tuple(float(r) for r in np.atleast_1d(self.rates))
        if any(not r >= 0 for r in rates):
            raise ValueError(f"rates must be nonnegative, got {rates}")
        if not 0.0 <= self.jitter <= JITTER_MAX:
            raise ValueError(f"jitter must lie in [0, {JITTER_MAX}], got {self.jitter}")
        object.__setattr__(self, "rates", rates)

    @classmethod
    def isotropic(cls, d: int, rate: float, jitter: float = JITTER_START) -> "KernelParams":
        return cls((rate,) * d, jitter)

    @property
    def dim(self) -> int:
        return len(self.rates)

    def with_jitter(self, jitter: float) -> "KernelParams":
        return KernelParams(self.rates, jitter)


def _check_dim(n_cols: int, params: KernelParams):
    if n_cols != params.dim:
        raise ValueError(f"design points have dimension {n_cols}, kernel expects {params.dim}")


def _scaled_sqdist(A: np.ndarray, B: np.ndarray, rates) -> np.ndarray:
    # accumulate per dimension in a fixed order so every entry point agrees bit-for-bit
    acc = np.zeros((A.shape[0], B.shape[0]))
    for k, rate in enumerate(rates):
        diff = A[:, None, k] - B[None, :, k]
        acc += rate * (diff * diff)
    return acc


def corr(x1, x2, params: KernelParams) -> float:
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x1.shape != x2.shape:
        raise ValueError("points have different dimensions")
    _check_dim(x1.shape[0], params)
    return float(np.exp(-_scaled_sqdist(x1[None, :], x2[None, :], params.rates))[0, 0])


def cross_corr(Xnew, X, params: KernelParams) -> np.ndarray:
    """(m, n) matrix of correlations between rows of ``Xnew`` and rows of ``X``."""
    Xnew = np.atleast_2d(np.asarray(Xnew, dtype=float))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    _check_dim(Xnew.shape[1], params)
    _check_dim(X.shape[1], params)
    return np.exp(-_scaled_sqdist(Xnew, X, params.rates))


def cross_corr_vec(x, X, params: KernelParams) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return cross_corr(x[None, :], X, params)[0]


@dataclass(frozen=True, eq=False)
class CorrMatrix:
    """Correlation matrix with nugget on the diagonal and its lower Cholesky factor."""

    R: np.ndarray
    L: np.ndarray
    jitter: float
    _ones_solve: np.ndarray = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.R.shape[0]

    def solve(self, b) -> np.ndarray:
        return cho_solve((self.L, True), b, check_finite=False)

    @property
    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.L))))

    @property
    def ones_solve(self) -> np.ndarray:
        """R^-1 1, cached."""
        if self._ones_solve is None:
            object.__setattr__(self, "_ones_solve", self.solve(np.ones(self.n)))
        return self._ones_solve


def factorize(K: np.ndarray, jitter: float, escalate: bool = True) -> CorrMatrix:
    """Cholesky-factorize ``K + jitter I``, raising the jitter tenfold on failure.

    Escalation starts at ``max(jitter, JITTER_START)`` after the first failure and
    stops at ``JITTER_MAX``.
    """
    n = K.shape[0]
    eye = np.eye(n)
    current = jitter
    while True:
        R = K + current * eye
        try:
            L = cholesky(R, lower=True, check_finite=False)
            if np.all(np.isfinite(L)):
                return CorrMatrix(R, L, current)
        except LinAlgError:
            pass
        if not escalate or current >= JITTER_MAX:
            raise IllConditionedError(
                f"correlation matrix of size {n} is not positive definite with jitter {current:g}"
            )
        current = min(JITTER_MAX, max(current * 10.0, JITTER_START))


def corr_matrix(X, params: KernelParams, escalate: bool = True) -> CorrMatrix:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    _check_dim(X.shape[1], params)
    K = np.exp(-_scaled_sqdist(X, X, params.rates))
    return factorize(K, params.jitter, escalate)


class SqDiffs:
    """Per-dimension squared differences of a fixed design, for repeated kernel builds."""

    def __init__(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        self.X = X
        self.parts = [(X[:, None, k] - X[None, :, k]) ** 2 for k in range(X.shape[1])]

    def kernel(self, rates) -> np.ndarray:
        acc = np.zeros_like(self.parts[0])
        for rate, part in zip(rates, self.parts):
            acc += rate * part
        return np.exp(-acc)


def output_cov(sigma2_y: float, sigma2_z: float, rho: float) -> np.ndarray:
    """2x2 between-output covariance [[s_y^2, rho s_y s_z], [rho s_y s_z, s_z^2]]."""
    c = rho * np.sqrt(sigma2_y * sigma2_z)
    return np.array([[sigma2_y, c], [c, sigma2_z]])


def kron_cov(sigma2_y: float, sigma2_z: float, rho: float, R) -> np.ndarray:
    """Covariance of the stacked vector (y_1..y_n, z_1..z_n) under the separable model."""
    if not abs(rho) < 1:
        raise ValueError(f"|rho| must be below 1, got {rho}")
    if sigma2_y <= 0 or sigma2_z <= 0:
        raise ValueError("output variances must be positive")
    return np.kron(output_cov(sigma2_y, sigma2_z, rho), np.asarray(R, dtype=float))
