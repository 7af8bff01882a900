"""Constrained black-box test problems.

Built-in synthetic problems live in a small registry.  Polynomial problems
are read from JSON files with the layout::

    {
      "dimension": 2,
      "domain": [[0, 1], [0, 1]],
      "threshold_c": 0.96,
      "objective_terms": [{"exponents": [2, 0], "coefficient": 1.0}, ...],
      "constraint_terms": [{"exponents": [0, 1], "coefficient": 0.5}, ...]
    }
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .kernel import Domain

MAX_DEGREE = 6
DEFAULT_THRESHOLD = 0.96


class ProblemFileError(ValueError):
    """A polynomial problem file could not be parsed or failed validation."""


@dataclass(frozen=True)
class Problem:
    """Minimize ``objective(x)`` subject to ``constraint(x) >= c`` over ``domain``."""

    name: str
    domain: Domain
    objective: Callable[[np.ndarray], float]
    constraint: Callable[[np.ndarray], float]
    c: float
    known_optimum: Optional[tuple] = None  # (point, value)

    @property
    def dim(self) -> int:
        return self.domain.dim


def evaluate(problem: Problem, x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float).ravel()
    if not problem.domain.contains(x):
        raise ValueError(f"point {x.tolist()} lies outside the domain of {problem.name!r}")
    y = float(problem.objective(x))
    z = float(problem.constraint(x))
    if not (math.isfinite(y) and math.isfinite(z)):
        raise ValueError(f"non-finite output at {x.tolist()}: y={y}, z={z}")
    return y, z


# --- polynomial problems -------------------------------------------------------


@dataclass(frozen=True)
class PolynomialSpec:
    dimension: int
    domain: tuple
    threshold_c: float
    objective_terms: tuple  # of (exponents, coefficient)
    constraint_terms: tuple

    @classmethod
    def from_dict(cls, doc: dict) -> "PolynomialSpec":
        if not isinstance(doc, dict):
            raise ProblemFileError("top level must be an object")
        missing = [k for k in ("dimension", "domain", "objective_terms", "constraint_terms") if k not in doc]
        if missing:
            raise ProblemFileError(f"missing field(s): {', '.join(missing)}")
        d = doc["dimension"]
        if not isinstance(d, int) or isinstance(d, bool) or d < 1:
            raise ProblemFileError(f"field 'dimension': expected a positive integer, got {d!r}")
        dom = doc["domain"]
        if not isinstance(dom, list) or len(dom) != d:
            raise ProblemFileError(f"field 'domain': expected {d} [lower, upper] pairs")
        for i, pair in enumerate(dom):
            if (
                not isinstance(pair, list)
                or len(pair) != 2
                or not all(_is_number(v) for v in pair)
                or not pair[0] < pair[1]
            ):
                raise ProblemFileError(f"field 'domain[{i}]': expected [lower, upper] with lower < upper, got {pair!r}")
        c = doc.get("threshold_c", DEFAULT_THRESHOLD)
        if not _is_number(c) or not math.isfinite(c):
            raise ProblemFileError(f"field 'threshold_c': expected a finite number, got {c!r}")
        return cls(
            d,
            tuple((float(a), float(b)) for a, b in dom),
            float(c),
            _parse_terms(doc["objective_terms"], "objective_terms", d),
            _parse_terms(doc["constraint_terms"], "constraint_terms", d),
        )

    def to_dict(self) -> dict:
        def terms(ts):
            return [{"exponents": list(e), "coefficient": c} for e, c in ts]

        return {
            "dimension": self.dimension,
            "domain": [list(p) for p in self.domain],
            "threshold_c": self.threshold_c,
            "objective_terms": terms(self.objective_terms),
            "constraint_terms": terms(self.constraint_terms),
        }

    def to_problem(self, name: str = "polynomial") -> Problem:
        lower, upper = zip(*self.domain)
        return Problem(
            name,
            Domain(lower, upper),
            Polynomial(self.objective_terms),
            Polynomial(self.constraint_terms),
            self.threshold_c,
        )


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _parse_terms(raw, field: str, d: int) -> tuple:
    if not isinstance(raw, list) or not raw:
        raise ProblemFileError(f"field '{field}': expected a non-empty list of terms")
    out = []
    for i, term in enumerate(raw):
        where = f"field '{field}[{i}]'"
        if not isinstance(term, dict) or "exponents" not in term or "coefficient" not in term:
            raise ProblemFileError(f"{where}: expected an object with 'exponents' and 'coefficient'")
        exps, coef = term["exponents"], term["coefficient"]
        if not isinstance(exps, list) or not all(
            isinstance(e, int) and not isinstance(e, bool) and e >= 0 for e in exps
        ):
            raise ProblemFileError(f"{where}: exponents must be nonnegative integers")
        if len(exps) != d:
            raise ProblemFileError(f"{where}: exponent vector has length {len(exps)}, expected {d}")
        if sum(exps) > MAX_DEGREE:
            raise ProblemFileError(f"{where}: total degree {sum(exps)} exceeds {MAX_DEGREE}")
        if not _is_number(coef) or not math.isfinite(coef):
            raise ProblemFileError(f"{where}: coefficient must be a finite number")
        out.append((tuple(exps), float(coef)))
    return tuple(out)


class Polynomial:
    """Sum of monomials ``coef * prod_k x_k ** e_k``, evaluated term by term in file order.

    Powers are expanded into repeated multiplication so results are bit-stable.
    """

    def __init__(self, terms):
        self.terms = tuple((tuple(int(e) for e in exps), float(c)) for exps, c in terms)

    def __call__(self, x) -> float:
        xs = [float(v) for v in np.asarray(x, dtype=float).ravel()]
        total = 0.0
        for exps, coef in self.terms:
            mono = 1.0
            for xk, ek in zip(xs, exps):
                for _ in range(ek):
                    mono *= xk
            total += coef * mono
        return total


def load_polynomial_problem(path) -> Problem:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ProblemFileError(f"{path}: line {err.lineno}, column {err.colno}: {err.msg}") from err
    try:
        spec = PolynomialSpec.from_dict(doc)
    except ProblemFileError as err:
        raise ProblemFileError(f"{path}: {err}") from None
    return spec.to_problem(path.stem)


# --- built-in problems ----------------------------------------------------------


def _quad_linear() -> Problem:
    return Problem(
        "quad-linear",
        Domain((0.0, 0.0), (1.0, 1.0)),
        lambda x: (x[0] - 0.3) ** 2 + (x[1] - 0.6) ** 2,
        lambda x: x[0] + x[1],
        1.1,
        ((0.4, 0.7), 0.02),
    )


def _sin_cos() -> Problem:
    return Problem(
        "sin-cos",
        Domain((0.0, 0.0), (6.0, 6.0)),
        lambda x: np.cos(2 * x[0]) * np.cos(x[1]) + np.sin(x[0]),
        lambda x: -(np.cos(x[0]) * np.cos(x[1]) - np.sin(x[0]) * np.sin(x[1])),
        -0.5,
        # best feasible node of a 2001 x 2001 grid
        ((4.713, 0.0), -1.999999066637673),
    )


def _corr_pair() -> Problem:
    return Problem(
        "corr-pair",
        Domain((0.0, 0.0), (1.0, 1.0)),
        lambda x: (x[0] - 0.5) ** 2 + x[1],
        lambda x: 0.96 + (x[0] - 0.5) ** 2 - 0.5 * x[1],
        0.96,
        ((0.5, 0.0), 0.0),
    )


_REGISTRY = {"quad-linear": _quad_linear, "sin-cos": _sin_cos, "corr-pair": _corr_pair}


def builtin_names() -> list[str]:
    return list(_REGISTRY)


def builtin(name: str) -> Problem:
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; available: {', '.join(_REGISTRY)}") from None


def resolve(problem: str | None = None, problem_file=None) -> Problem:
    if problem_file:
        return load_polynomial_problem(problem_file)
    if problem is None:
        raise ValueError("either a problem name or a problem file is required")
    if problem.endswith(".json") or Path(problem).is_file():
        return load_polynomial_problem(problem)
    return builtin(problem)
