"""Expected improvement, expected constrained improvement and their maximization."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.stats import qmc

from ._seeding import make_rng
from .bigp import BiPosterior
from .kernel import Domain
from .stats import MILLS_SWITCH, _MILLS_SERIES, bvn_cdf, mills_upper, norm_cdf, norm_pdf

# standardized argument of Phi in t2 below which ECI is reported as exactly 0
ZERO_BELOW = -8.0


def _out(value):
    value = np.asarray(value, dtype=float)
    return float(value) if value.ndim == 0 else value


@dataclass(frozen=True)
class AcqContext:
    """Incumbent objective value and constraint threshold."""

    y_min: float
    c: float

    def __post_init__(self):
        if not math.isfinite(self.c):
            raise ValueError("constraint threshold must be finite")


def incumbent(y, z, c: float) -> tuple[float, bool]:
    """Best objective among feasible observations (z >= c).

    Falls back to the overall minimum when nothing is feasible; the second
    return value tells which case applied.
    """
    y = np.asarray(y, dtype=float)
    feas = np.asarray(z, dtype=float) >= c
    if feas.any():
        return float(y[feas].min()), True
    return float(y.min()), False


def ei(mean, variance, y_min):
    mean, variance, y_min = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (mean, variance, y_min))
    )
    s = np.sqrt(np.maximum(variance, 0.0))
    gap = y_min - mean
    with np.errstate(divide="ignore", invalid="ignore"):
        u = gap / s
        val = gap * norm_cdf(u) + s * norm_pdf(u)
    val = np.where(s > 0, val, np.maximum(gap, 0.0))
    return _out(np.maximum(val, 0.0))


def feasibility_prob(mean_z, var_z, c):
    """P(z >= c) for z ~ N(mean_z, var_z); an indicator when the variance is 0."""
    mean_z, var_z = np.broadcast_arrays(np.asarray(mean_z, float), np.asarray(var_z, float))
    s = np.sqrt(np.maximum(var_z, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        p = norm_cdf((mean_z - c) / s)
    return _out(np.where(s > 0, p, (mean_z >= c).astype(float)))


def eci_independent(post_y, post_z, ctx: AcqContext):
    """EI of the objective times the feasibility probability of the constraint."""
    (my, vy), (mz, vz) = post_y, post_z
    return _out(ei(my, vy, ctx.y_min) * feasibility_prob(mz, vz, ctx.c))


def mills_tail(b, leading_order: bool = False):
    """Mills ratio replacement on the far tail: ``b`` alone, or the full asymptotic series."""
    b = np.asarray(b, dtype=float)
    if leading_order:
        return b
    series = np.zeros_like(b)
    inv2 = 1.0 / (b * b)
    for coef in reversed(_MILLS_SERIES):
        series = series * inv2 + coef
    return b * series


class EciTerms(NamedTuple):
    t1: np.ndarray
    t2: np.ndarray
    t3: np.ndarray
    value: np.ndarray


def eci_terms(
    post: BiPosterior,
    ctx: AcqContext,
    *,
    leading_order: bool = False,
    switch: float = MILLS_SWITCH,
) -> EciTerms:
    """Closed-form ECI for correlated outputs with its three factors.

    ``value = max(0, (t1 + t2) * t3)`` where t1 shifts the improvement by the
    constraint-side Mills ratio, t2 is the truncated-normal correction with the
    conditional scale ``sigma_y sqrt(1 - rho^2)`` and t3 is the probability of
    the region {y <= y_min, z >= c}.

    Past ``switch`` the Mills ratio is replaced by its tail form (see
    ``mills_tail``).  Where the standardized t2 argument falls below
    ``ZERO_BELOW`` the value is exactly 0.  Zero posterior variances are handled
    as limits and reported with ``nan`` terms.
    """
    my, mz, vy, vz = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (post.mean_y, post.mean_z, post.var_y, post.var_z))
    )
    rho = np.broadcast_to(np.asarray(post.rho, dtype=float), my.shape)
    sy = np.sqrt(np.maximum(vy, 0.0))
    sz = np.sqrt(np.maximum(vz, 0.0))
    ok = (sy > 0) & (sz > 0)
    safe_sy = np.where(ok, sy, 1.0)
    safe_sz = np.where(ok, sz, 1.0)
    a = (ctx.y_min - my) / safe_sy
    b = (ctx.c - mz) / safe_sz
    tail = b > switch
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        mills = np.where(tail, mills_tail(np.where(tail, b, 1.0), leading_order), mills_upper(b))
        t1 = ctx.y_min - my - rho * safe_sy * mills
        scale = safe_sy * np.sqrt(1.0 - rho * rho)
        q = t1 / scale
        zero = q < ZERO_BELOW
        qs = np.where(zero, 0.0, q)
        t2 = np.where(zero, 0.0, scale * norm_pdf(qs) / norm_cdf(qs))
    # P(A <= a, B > b) written without the cancellation in Phi(a) - Phi2(a, b; rho)
    t3 = np.asarray(bvn_cdf(a, -b, -rho), dtype=float)
    value = np.where(zero, 0.0, np.maximum((t1 + t2) * t3, 0.0))

    if not ok.all():
        degenerate = np.where(
            sy > 0,
            np.asarray(ei(my, vy, ctx.y_min)) * (mz >= ctx.c),
            np.maximum(ctx.y_min - my, 0.0) * np.asarray(feasibility_prob(mz, vz, ctx.c)),
        )
        value = np.where(ok, value, degenerate)
        t1, t2, t3 = (np.where(ok, t, np.nan) for t in (t1, t2, t3))
    return EciTerms(_out(t1), _out(t2), _out(t3), _out(value))


def eci_bivariate(post: BiPosterior, ctx: AcqContext, **kwargs):
    return eci_terms(post, ctx, **kwargs).value


class McEci(NamedTuple):
    estimate: float
    stderr: float
    region_prob: float
    region_stderr: float


def mc_feasible_improvement(
    post: BiPosterior, ctx: AcqContext, samples: int = 10**7, seed: int = 0, chunk: int = 10**6
) -> McEci:
    """Sample (y, z) from the posterior and average max(0, y_min - y) 1{z >= c}.

    Also estimates the probability of {y <= y_min, z >= c}.
    """
    if samples < 10**4:
        raise ValueError("samples must be at least 1e4")
    rng = make_rng(seed, "eci_mc_oracle")
    sy, sz = math.sqrt(max(post.var_y, 0.0)), math.sqrt(max(post.var_z, 0.0))
    rho = post.rho
    s = math.sqrt(max(0.0, 1.0 - rho * rho))
    tot = tot2 = hits = 0.0
    done = 0
    while done < samples:
        n = min(chunk, samples - done)
        e1 = rng.standard_normal(n)
        e2 = rng.standard_normal(n)
        y = post.mean_y + sy * e1
        z = post.mean_z + sz * (rho * e1 + s * e2)
        feas = z >= ctx.c
        g = np.where(feas, np.maximum(ctx.y_min - y, 0.0), 0.0)
        tot += g.sum()
        tot2 += (g * g).sum()
        hits += np.count_nonzero(feas & (y <= ctx.y_min))
        done += n
    mean = tot / samples
    var = max(0.0, tot2 / samples - mean * mean)
    p = hits / samples
    return McEci(mean, math.sqrt(var / samples), p, math.sqrt(p * (1 - p) / samples))


def eci_mc_oracle(post: BiPosterior, ctx: AcqContext, samples: int = 10**7, seed: int = 0):
    res = mc_feasible_improvement(post, ctx, samples, seed)
    return res.estimate, res.stderr


@dataclass(frozen=True)
class AcqSettings:
    candidates: int = 2048
    n_local: int = 5
    local_evals: int = 60


class AcqResult(NamedTuple):
    x: np.ndarray
    value: float
    fallback: bool


def _candidates(d: int, n: int, rng) -> np.ndarray:
    sampler = qmc.Sobol(d, scramble=True, seed=rng)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # non power-of-two sizes lose balance, acceptable here
        return sampler.random(n)


def maximize_acquisition(
    acq: Callable[[np.ndarray], np.ndarray],
    domain: Domain,
    settings: AcqSettings = AcqSettings(),
    seed: int = 0,
    fallback: Callable[[np.ndarray], np.ndarray] | None = None,
) -> AcqResult:
    """Maximize ``acq`` (rows of physical points -> values) over ``domain``.

    A scrambled Sobol set is scored in one call, then the best ``n_local``
    candidates are refined together by compass search in unit coordinates,
    each spending at most ``local_evals`` evaluations.  When the candidate
    scores are flat (typically all zero) the candidate maximizing ``fallback``
    is returned instead and the result is flagged.
    """
    d = domain.dim
    rng = make_rng(seed, "maximize_acquisition")
    U = _candidates(d, settings.candidates, rng)
    vals = np.asarray(acq(domain.from_unit(U)), dtype=float).reshape(-1)
    vals = np.where(np.isfinite(vals), vals, -np.inf)
    if not vals.max() > vals.min():
        if fallback is not None:
            score = np.asarray(fallback(domain.from_unit(U)), dtype=float).reshape(-1)
            i = int(np.argmax(score))
        else:
            i = 0
        return AcqResult(domain.from_unit(U[i]), float(vals[i]), True)

    order = np.argsort(-vals, kind="stable")[: settings.n_local]
    pts = U[order].copy()
    best = vals[order].copy()
    step = np.full(len(order), min(0.1, settings.candidates ** (-1.0 / d)))
    moves = np.vstack([np.eye(d), -np.eye(d)])
    for _ in range(settings.local_evals // (2 * d)):
        trial = np.clip(pts[:, None, :] + step[:, None, None] * moves[None], 0.0, 1.0)
        tv = np.asarray(acq(domain.from_unit(trial.reshape(-1, d))), dtype=float)
        tv = np.where(np.isfinite(tv), tv, -np.inf).reshape(len(order), 2 * d)
        j = np.argmax(tv, axis=1)
        gain = tv[np.arange(len(order)), j] > best
        pts[gain] = trial[np.arange(len(order)), j][gain]
        best[gain] = tv[np.arange(len(order)), j][gain]
        step = np.where(gain, step, step / 2)
    k = int(np.argmax(best))
    return AcqResult(domain.from_unit(pts[k]), float(best[k]), False)
