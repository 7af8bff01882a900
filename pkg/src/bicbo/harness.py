"""Sequential constrained optimization loop and replication studies."""

from __future__ import annotations

import csv
import json
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from . import __version__
from ._seeding import make_rng
from .acquisition import (
    AcqContext,
    AcqSettings,
    eci_bivariate,
    eci_independent,
    feasibility_prob,
    incumbent,
    maximize_acquisition,
)
from .bigp import bigp_predict, estimate_shared_kernel, fit_bigp
from .gp import Dataset, estimate_kernel, fit_gp, gp_predict
from .kernel import Domain, IllConditionedError
from .problems import Problem, evaluate, resolve

METHODS = ("independent", "bivariate")
Z_95 = 1.96
_LHS_TRIES = 20


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str = "quad-linear"
    problem_file: Optional[str] = None
    method: str = "bivariate"
    initial_size: int = 25
    steps: int = 150
    replications: int = 30
    seed: int = 0
    candidates: int = 2048
    n_local: int = 5
    local_evals: int = 60
    refit_every: int = 1
    record_timing: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.initial_size < 2:
            raise ValueError("initial_size must be at least 2")
        if self.steps < 0 or self.replications < 1 or self.refit_every < 1:
            raise ValueError("steps must be >= 0, replications and refit_every >= 1")
        if self.candidates < 1 or self.n_local < 1 or self.local_evals < 0:
            raise ValueError("invalid acquisition optimizer settings")

    @property
    def acq_settings(self) -> AcqSettings:
        return AcqSettings(self.candidates, self.n_local, self.local_evals)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config field(s): {', '.join(sorted(unknown))}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def resolve_problem(self) -> Problem:
        return resolve(self.problem, self.problem_file)


@dataclass(frozen=True)
class TraceRow:
    step: int
    x: tuple
    y: float
    z: float
    feasible: bool
    best_feasible: float
    acq_value: float
    rho_hat: float
    wall_ms: float


@dataclass
class RunTrace:
    replication: int
    method: str
    rows: list = field(default_factory=list)
    infeasible_phase_steps: int = 0
    kernel_fallbacks: int = 0
    rho_fallbacks: int = 0
    acq_fallbacks: int = 0
    fit_failures: int = 0
    clamped_variances: int = 0

    @property
    def wall_seconds(self) -> float:
        return sum(r.wall_ms for r in self.rows) / 1000.0

    def best_by_step(self) -> np.ndarray:
        """Best feasible value after each step (index 0 is the initial design)."""
        last = {}
        for r in self.rows:
            last[r.step] = r.best_feasible
        return np.array([last[s] for s in sorted(last)])

    def recommendation(self):
        """Best observed feasible (x, y), or None when nothing feasible was seen."""
        feas = [r for r in self.rows if r.feasible]
        if not feas:
            return None
        best = min(feas, key=lambda r: r.y)
        return best.x, best.y

    def comparable(self) -> list:
        """Rows without timing, for reproducibility checks."""
        return [replace(r, wall_ms=0.0) for r in self.rows]


def initial_design(domain: Domain, size: int, seed: int) -> np.ndarray:
    """Latin hypercube sample chosen among several by largest minimum pairwise distance."""
    if size < 2:
        raise ValueError("size must be at least 2")
    rng = make_rng(seed, "initial_design")
    d = domain.dim
    best, best_score = None, -1.0
    for _ in range(_LHS_TRIES):
        cells = np.column_stack([rng.permutation(size) for _ in range(d)])
        U = (cells + rng.random((size, d))) / size
        diff = U[:, None, :] - U[None, :, :]
        dist = np.sqrt((diff * diff).sum(-1))
        score = dist[np.triu_indices(size, 1)].min()
        if score > best_score:
            best, best_score = U, score
    return domain.from_unit(best)


class _Surrogate:
    """Fitted models for one method plus the acquisition they induce."""

    def __init__(self, method: str):
        self.method = method
        self.kernels = None
        self.models = None
        self.rho = math.nan

    def refit(self, U, y, z, estimate: bool, trace: RunTrace):
        if estimate or self.kernels is None:
            try:
                if self.method == "bivariate":
                    est = estimate_shared_kernel(U, y, z)
                    kernels = (est.params,)
                    fallback = est.fallback
                else:
                    ey, ez = estimate_kernel(U, y), estimate_kernel(U, z)
                    kernels = (ey.params, ez.params)
                    fallback = ey.fallback or ez.fallback
                trace.kernel_fallbacks += int(fallback)
                if not (fallback and self.kernels is not None):
                    self.kernels = kernels
            except IllConditionedError:
                trace.fit_failures += 1
                if self.kernels is None:
                    raise
        if self.method == "bivariate":
            model = fit_bigp(Dataset(U, y, z), self.kernels[0])
            self.models = (model,)
            self.rho = model.rho
            trace.rho_fallbacks += int(model.rho_fallback)
        else:
            self.models = (fit_gp(U, y, self.kernels[0]), fit_gp(U, z, self.kernels[1]))

    def acquisition(self, ctx: AcqContext, trace: RunTrace):
        if self.method == "bivariate":
            (model,) = self.models

            def acq(U):
                p = bigp_predict(model, U)
                trace.clamped_variances += p.n_clamped
                return eci_bivariate(p, ctx)

            return acq
        my, mz = self.models

        def acq(U):
            py, pz = gp_predict(my, U), gp_predict(mz, U)
            trace.clamped_variances += py.n_clamped + pz.n_clamped
            return eci_independent((py.mean, py.var), (pz.mean, pz.var), ctx)

        return acq

    def feasibility(self, c: float):
        if self.method == "bivariate":
            (model,) = self.models

            def prob(U):
                p = bigp_predict(model, U)
                return feasibility_prob(p.mean_z, p.var_z, c)

            return prob
        mz = self.models[1]

        def prob(U):
            p = gp_predict(mz, U)
            return feasibility_prob(p.mean, p.var, c)

        return prob


def _best_feasible(prev: float, y: float, feasible: bool) -> float:
    if not feasible:
        return prev
    return y if math.isnan(prev) else min(prev, y)


def run_bo(problem: Problem, config: ExperimentConfig, replication: int = 0) -> RunTrace:
    """One optimization run: initial design, then ``config.steps`` acquisition steps.

    Random streams are keyed by ``(config.seed, replication)`` so the initial
    design is shared between methods for the same replication.
    """
    domain = problem.domain
    if config.initial_size < domain.dim + 2:
        raise ValueError(f"initial_size must be at least d + 2 = {domain.dim + 2}")
    trace = RunTrace(replication, config.method)
    clock = time.perf_counter if config.record_timing else (lambda: 0.0)

    t0 = clock()
    X = initial_design(domain, config.initial_size, _seed(config.seed, replication, "init"))
    ys, zs = [], []
    for x in X:
        y, z = evaluate(problem, x)
        ys.append(y)
        zs.append(z)
    per_point = (clock() - t0) * 1000.0 / len(X)
    best = math.nan
    for x, y, z in zip(X, ys, zs):
        feas = z >= problem.c
        best = _best_feasible(best, y, feas)
        trace.rows.append(TraceRow(0, tuple(map(float, x)), y, z, feas, best, math.nan, math.nan, per_point))

    surrogate = _Surrogate(config.method)
    U = domain.to_unit(X)
    for step in range(1, config.steps + 1):
        t0 = clock()
        yv, zv = np.asarray(ys), np.asarray(zs)
        surrogate.refit(U, yv, zv, (step - 1) % config.refit_every == 0, trace)
        y_min, found = incumbent(yv, zv, problem.c)
        trace.infeasible_phase_steps += int(not found)
        ctx = AcqContext(y_min, problem.c)
        acq = surrogate.acquisition(ctx, trace)
        res = maximize_acquisition(
            lambda P: acq(domain.to_unit(P)),
            domain,
            config.acq_settings,
            _seed(config.seed, replication, "acq", step),
            fallback=(lambda P, f=surrogate.feasibility(problem.c): f(domain.to_unit(P))),
        )
        trace.acq_fallbacks += int(res.fallback)
        x = np.clip(res.x, domain.lower, domain.upper)
        y, z = evaluate(problem, x)
        feas = z >= problem.c
        best = _best_feasible(best, y, feas)
        ys.append(y)
        zs.append(z)
        U = np.vstack([U, domain.to_unit(x)[None, :]])
        trace.rows.append(
            TraceRow(step, tuple(map(float, x)), y, z, feas, best, res.value, surrogate.rho, (clock() - t0) * 1000.0)
        )
    return trace


def _seed(seed: int, replication: int, *labels) -> int:
    return int(make_rng(seed, replication, *labels).integers(2**63))


@dataclass
class Study:
    config: ExperimentConfig
    traces: list
    aggregate: list  # rows (step, mean, lo95, hi95)

    @property
    def final(self):
        return self.aggregate[-1]

    @property
    def wall_seconds(self) -> float:
        return sum(t.wall_seconds for t in self.traces)


def band(values) -> tuple[float, float, float]:
    """Mean and normal-approximation 95% band of the non-missing values."""
    v = np.asarray(values, dtype=float)
    v = v[~np.isnan(v)]
    if v.size == 0:
        return math.nan, math.nan, math.nan
    mean = float(v.mean())
    if v.size < 2:
        return mean, math.nan, math.nan
    half = Z_95 * float(v.std(ddof=1)) / math.sqrt(v.size)
    return mean, mean - half, mean + half


def _run_one(args):
    config, replication = args
    return run_bo(config.resolve_problem(), config, replication)


def run_replications(config: ExperimentConfig, problem: Problem | None = None) -> list:
    jobs = [(config, r) for r in range(config.replications)]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            return list(pool.map(_run_one, jobs))
    problem = problem or config.resolve_problem()
    return [run_bo(problem, config, r) for _, r in jobs]


def aggregate(traces) -> list:
    curves = np.array([t.best_by_step() for t in traces])
    return [(step, *band(curves[:, step])) for step in range(curves.shape[1])]


def replicate(config: ExperimentConfig, problem: Problem | None = None) -> Study:
    if config.replications < 2:
        raise ValueError("a replication study needs at least 2 replications")
    traces = run_replications(config, problem)
    return Study(config, traces, aggregate(traces))


_PROTOCOL_EXEMPT = {"method", "record_timing", "workers"}


@dataclass
class Comparison:
    a: Study
    b: Study
    rows: list  # (step, mean_diff, lo95, hi95) of a - b

    @property
    def wall_ratio(self) -> float:
        """Total wall-clock of b divided by a."""
        return self.b.wall_seconds / self.a.wall_seconds if self.a.wall_seconds > 0 else math.nan


def compare(config_a: ExperimentConfig, config_b: ExperimentConfig, problem: Problem | None = None) -> Comparison:
    """Paired-by-replication comparison of two methods under one protocol."""
    da, db = config_a.to_dict(), config_b.to_dict()
    mismatched = sorted(k for k in da if k not in _PROTOCOL_EXEMPT and da[k] != db[k])
    if mismatched:
        raise ValueError(f"protocols differ in: {', '.join(mismatched)}")
    sa, sb = replicate(config_a, problem), replicate(config_b, problem)
    ca = np.array([t.best_by_step() for t in sa.traces])
    cb = np.array([t.best_by_step() for t in sb.traces])
    diff = ca - cb
    rows = [(step, *band(diff[:, step])) for step in range(diff.shape[1])]
    return Comparison(sa, sb, rows)


# --- outputs --------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_trace_csv(traces, path, d: int):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(
            ["replication", "step"]
            + [f"x_{k + 1}" for k in range(d)]
            + ["y", "z", "feasible", "best_feasible", "acq_value", "rho_hat", "wall_ms"]
        )
        for t in traces:
            for r in t.rows:
                w.writerow(
                    [_fmt(t.replication), _fmt(r.step)]
                    + [_fmt(v) for v in r.x]
                    + [_fmt(v) for v in (r.y, r.z, r.feasible, r.best_feasible, r.acq_value, r.rho_hat, r.wall_ms)]
                )


def write_band_csv(rows, path, header):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_aggregate_csv(rows, path):
    write_band_csv(rows, path, ["step", "mean", "lo95", "hi95"])


def write_compare_csv(rows, path):
    write_band_csv(rows, path, ["step", "mean_diff", "lo95", "hi95"])


def diagnostics(traces) -> dict:
    keys = ("infeasible_phase_steps", "kernel_fallbacks", "rho_fallbacks", "acq_fallbacks", "fit_failures", "clamped_variances")
    return {k: sum(getattr(t, k) for t in traces) for k in keys}


def manifest(configs, traces, extra: dict | None = None) -> dict:
    doc = {
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "configs": [c.to_dict() for c in configs],
        "replication_seeds": [[c.seed, r] for c in configs[:1] for r in range(c.replications)],
        "diagnostics": diagnostics(traces),
    }
    if extra:
        doc.update(extra)
    return doc


def write_manifest(doc: dict, path):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
