"""Normal and bivariate-normal special functions.

Everything here accepts scalars or NumPy arrays (broadcast elementwise) and
returns a ``float`` for scalar input.  The bivariate CDF follows Genz's
double-precision adaptation of the Drezner-Wesolowsky method with a fixed
20-point Gauss-Legendre rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from ._seeding import make_rng

SQRT_2PI = math.sqrt(2.0 * math.pi)

# b above which the upper Mills ratio uses its asymptotic expansion
MILLS_SWITCH = 8.0
# coefficients of b * sum_k c_k b^(-2k), the inverted Laplace series
_MILLS_SERIES = (1.0, 1.0, -2.0, 10.0, -74.0, 706.0, -8162.0, 110410.0, -1708394.0)

# Phi(q) below which a truncated mean is reported as degenerate
DEGENERATE_PROB = 1e-300

_TINY = np.nextafter(0.0, 1.0)

_GL_X, _GL_W = np.polynomial.legendre.leggauss(20)
_GL_W = _GL_W[_GL_X < 0]
_GL_X = _GL_X[_GL_X < 0]


def _out(value):
    value = np.asarray(value, dtype=float)
    return float(value) if value.ndim == 0 else value


@dataclass(frozen=True)
class BvnParams:
    """Location, scale and correlation of a bivariate normal pair (W, V)."""

    mu_w: float = 0.0
    mu_v: float = 0.0
    sigma_w: float = 1.0
    sigma_v: float = 1.0
    rho: float = 0.0

    def __post_init__(self):
        if not (self.sigma_w > 0 and self.sigma_v > 0):
            raise ValueError("sigma_w and sigma_v must be positive")
        if not abs(self.rho) <= 1.0:
            raise ValueError(f"correlation must lie in [-1, 1], got {self.rho}")

    @property
    def cov(self) -> np.ndarray:
        c = self.rho * self.sigma_w * self.sigma_v
        return np.array([[self.sigma_w**2, c], [c, self.sigma_v**2]])


def norm_pdf(u):
    u = np.asarray(u, dtype=float)
    with np.errstate(over="ignore"):
        return _out(np.exp(-0.5 * u * u) / SQRT_2PI)


def norm_cdf(u):
    return _out(ndtr(np.asarray(u, dtype=float)))


def _bvn_upper(h, k, r):
    """P(X > h, Y > k) for a standard bivariate normal with correlation r.

    Inputs are finite arrays of a common shape with |r| <= 1.
    """
    x, w = _GL_X, _GL_W
    hk = h * k
    out = np.empty_like(h)

    low = np.abs(r) < 0.925
    if low.any():
        hl, kl, rl = h[low], k[low], r[low]
        hkl = hk[low][:, None]
        hs = ((hl * hl + kl * kl) / 2)[:, None]
        asr = np.arcsin(rl)[:, None]
        sn = np.sin(asr * (x + 1) / 2)
        acc = (w * np.exp((sn * hkl - hs) / (1 - sn * sn))).sum(axis=1)
        sn = np.sin(asr * (1 - x) / 2)
        acc += (w * np.exp((sn * hkl - hs) / (1 - sn * sn))).sum(axis=1)
        out[low] = acc * asr[:, 0] / (4 * np.pi) + ndtr(-hl) * ndtr(-kl)

    high = ~low
    if high.any():
        hh, rh = h[high], r[high]
        kh = np.where(rh < 0, -k[high], k[high])
        hkh = np.where(rh < 0, -hk[high], hk[high])
        bvn = np.zeros_like(hh)
        inner = np.abs(rh) < 1
        if inner.any():
            hi, ki, hki, ri = hh[inner], kh[inner], hkh[inner], rh[inner]
            as_ = (1 - ri) * (1 + ri)
            a = np.sqrt(as_)
            bs = (hi - ki) ** 2
            c = (4 - hki) / 8
            d = (12 - hki) / 16
            val = a * np.exp(-(bs / as_ + hki) / 2) * (
                1 - c * (bs - as_) * (1 - d * bs / 5) / 3 + c * d * as_ * as_ / 5
            )
            b = np.sqrt(bs)
            tail = np.where(
                hki > -160,
                np.exp(-np.maximum(hki, -160) / 2)
                * SQRT_2PI
                * ndtr(-b / a)
                * b
                * (1 - c * bs * (1 - d * bs / 5) / 3),
                0.0,
            )
            val -= tail
            a2 = (a / 2)[:, None]
            bs2, hk2 = bs[:, None], hki[:, None]
            c2, d2 = c[:, None], d[:, None]
            with np.errstate(divide="ignore", invalid="ignore"):
                xs = (a2 * (x + 1)) ** 2
                rs = np.sqrt(1 - xs)
                term = np.exp(-bs2 / (2 * xs) - hk2 / (1 + rs)) / rs - np.exp(
                    -(bs2 / xs + hk2) / 2
                ) * (1 + c2 * xs * (1 + d2 * xs))
                val += (a2[:, 0]) * np.nan_to_num(w * term).sum(axis=1)
                xs = as_[:, None] * (1 - x) ** 2 / 4
                rs = np.sqrt(1 - xs)
                term = np.exp(-(bs2 / xs + hk2) / 2) * (
                    np.exp(-hk2 * (1 - rs) / (2 * (1 + rs))) / rs
                    - (1 + c2 * xs * (1 + d2 * xs))
                )
                val += (a2[:, 0]) * np.nan_to_num(w * term).sum(axis=1)
            bvn[inner] = -val / (2 * np.pi)
        bvn = np.where(
            rh > 0,
            bvn + ndtr(-np.maximum(hh, kh)),
            -bvn + np.maximum(0.0, ndtr(-hh) - ndtr(-kh)),
        )
        out[high] = bvn
    return np.clip(out, 0.0, 1.0)


def bvn_cdf(a, b, rho):
    """P(A <= a, B <= b) for a standard bivariate normal with correlation rho.

    Infinite limits are allowed.  Absolute accuracy is around 1e-15.
    """
    a, b, rho = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, rho)))
    if np.any(np.abs(rho) > 1) or np.any(np.isnan(rho)):
        raise ValueError("correlation must lie in [-1, 1]")
    shape = a.shape
    a, b, rho = a.ravel(), b.ravel(), rho.ravel()
    res = _bvn_upper(-np.clip(a, -40, 40), -np.clip(b, -40, 40), rho.copy())
    # exact limits
    res = np.where(np.isposinf(a), ndtr(b), res)
    res = np.where(np.isposinf(b), ndtr(a), res)
    res = np.where(np.isposinf(a) & np.isposinf(b), 1.0, res)
    res = np.where(np.isneginf(a) | np.isneginf(b), 0.0, res)
    return _out(res.reshape(shape))


def mills_upper(b):
    """Upper Mills ratio phi(b) / (1 - Phi(b)).

    Past ``MILLS_SWITCH`` the inverted Laplace asymptotic series
    ``b + 1/b - 2/b**3 + ...`` (nine terms) is used; it agrees with the exact
    ratio to about 1e-9 relative at the switch point.
    """
    b = np.asarray(b, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        exact = np.exp(-0.5 * b * b) / SQRT_2PI / ndtr(-b)
        # stays strictly positive where phi(b) underflows (b below about -38.5)
        exact = np.where(np.isneginf(b), 0.0, np.maximum(exact, _TINY))
        inv2 = 1.0 / (b * b)
        series = np.zeros_like(b)
        for coef in reversed(_MILLS_SERIES):
            series = series * inv2 + coef
        asym = b * series
    return _out(np.where(b > MILLS_SWITCH, asym, exact))


def trunc_bvn_mean(params: BvnParams, w: float, v: float) -> float:
    """Closed-form E[W | W <= w, V >= v] in the nested-ratio form.

    The formula shifts the mean by the V-side Mills ratio and then applies a
    univariate upper truncation at ``w`` with scale ``sigma_w * sqrt(1 - rho^2)``.
    It is exact at ``rho == 0``; for other correlations it is an approximation
    (see ``mc_trunc_bvn_mean`` for a sampling reference).

    Returns ``nan`` as a degenerate marker when the truncation probability of
    the inner ratio underflows (``Phi(q) < DEGENERATE_PROB``).
    """
    rho = params.rho
    if abs(rho) >= 1.0:
        raise ValueError("trunc_bvn_mean requires |rho| < 1")
    m = mills_upper((v - params.mu_v) / params.sigma_v)
    shifted = params.mu_w + rho * params.sigma_w * m
    scale = params.sigma_w * math.sqrt(1.0 - rho * rho)
    q = (w - shifted) / scale
    denom = norm_cdf(q)
    if denom < DEGENERATE_PROB:
        return math.nan
    return shifted - scale * norm_pdf(q) / denom


def univariate_trunc_mean(mu: float, sigma: float, w: float) -> float:
    """E[W | W <= w] for W ~ N(mu, sigma^2)."""
    u = (w - mu) / sigma
    return mu - sigma * norm_pdf(u) / norm_cdf(u)


def mc_trunc_bvn_mean(
    params: BvnParams,
    w: float,
    v: float,
    samples: int = 10**6,
    seed: int = 0,
    chunk: int = 10**6,
    max_draws: int | None = None,
) -> tuple[float, float]:
    """Rejection-sampling estimate of E[W | W <= w, V >= v] and its standard error.

    ``samples`` is the number of accepted draws targeted.  Sampling stops at
    ``max_draws`` (default ``max(100 * samples, 10**7)``); if the observed
    acceptance rate is then below 1e-6 the region is treated as empty.
    """
    if samples < 10**4:
        raise ValueError("samples must be at least 1e4")
    if max_draws is None:
        max_draws = max(100 * samples, 10**7)
    rng = make_rng(seed, "mc_trunc_bvn_mean")
    rho = params.rho
    s = math.sqrt(max(0.0, 1.0 - rho * rho))
    total = 0.0
    total_sq = 0.0
    accepted = 0
    drawn = 0
    while accepted < samples and drawn < max_draws:
        n = min(chunk, max_draws - drawn)
        e1 = rng.standard_normal(n)
        e2 = rng.standard_normal(n)
        wv = params.mu_w + params.sigma_w * e1
        vv = params.mu_v + params.sigma_v * (rho * e1 + s * e2)
        keep = wv[(wv <= w) & (vv >= v)]
        keep = keep[: samples - accepted]
        total += keep.sum()
        total_sq += (keep * keep).sum()
        accepted += keep.size
        drawn += n
    if accepted == 0 or accepted / drawn < 1e-6:
        raise RuntimeError(
            f"truncation region effectively empty: {accepted} of {drawn} draws accepted"
        )
    mean = total / accepted
    var = max(0.0, total_sq / accepted - mean * mean)
    return mean, math.sqrt(var / accepted)
