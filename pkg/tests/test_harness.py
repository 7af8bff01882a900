import csv
import json
import math
from dataclasses import replace

import numpy as np
import pytest

from bicbo import cli
from bicbo.harness import (
    ExperimentConfig,
    band,
    compare,
    initial_design,
    manifest,
    replicate,
    run_bo,
    write_aggregate_csv,
    write_trace_csv,
)
from bicbo.kernel import Domain
from bicbo.problems import Problem, builtin

FAST = ExperimentConfig(initial_size=8, steps=4, replications=3, candidates=128, local_evals=12, record_timing=False)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestInitialDesign:
    def test_two_points_split_halves(self):
        X = initial_design(Domain.unit(1), 2, seed=3)
        assert sorted(int(v // 0.5) for v in X[:, 0]) == [0, 1]

    @pytest.mark.parametrize("size,d", [(5, 2), (25, 2), (50, 4), (7, 1)])
    def test_latin_strata(self, size, d):
        X = initial_design(Domain.unit(d), size, seed=size)
        for k in range(d):
            assert sorted((X[:, k] * size).astype(int)) == list(range(size))

    def test_scaled_domain_and_determinism(self):
        dom = Domain((0.0, -3.0), (6.0, 3.0))
        A = initial_design(dom, 10, seed=1)
        assert np.array_equal(A, initial_design(dom, 10, seed=1))
        assert not np.array_equal(A, initial_design(dom, 10, seed=2))
        assert all(dom.contains(x) for x in A)

    def test_maximin_improves_on_plain_lhs(self):
        # best of several Latin hypercubes should beat a typical single one
        def mindist(X):
            D = np.sqrt(((X[:, None] - X[None]) ** 2).sum(-1))
            return D[np.triu_indices(len(X), 1)].min()

        g = np.random.default_rng(0)
        plain = []
        for _ in range(50):
            cells = np.column_stack([g.permutation(20) for _ in range(2)])
            plain.append(mindist((cells + g.random((20, 2))) / 20))
        assert mindist(initial_design(Domain.unit(2), 20, seed=0)) > np.median(plain)


class TestRunBo:
    def test_zero_steps(self):
        p = builtin("quad-linear")
        t = run_bo(p, replace(FAST, steps=0))
        assert len(t.rows) == 8 and all(r.step == 0 for r in t.rows)
        feas = [r for r in t.rows if r.feasible]
        if feas:
            assert t.recommendation()[1] == min(r.y for r in feas)

    def test_budget_and_monotone(self):
        p = builtin("corr-pair")
        for method in ("independent", "bivariate"):
            t = run_bo(p, replace(FAST, method=method, steps=6))
            assert len(t.rows) == 8 + 6
            assert [r.step for r in t.rows] == [0] * 8 + list(range(1, 7))
            best = [r.best_feasible for r in t.rows if not math.isnan(r.best_feasible)]
            assert all(b2 <= b1 for b1, b2 in zip(best, best[1:]))
            rec = t.recommendation()
            if rec is not None:
                assert p.constraint(np.array(rec[0])) >= p.c

    def test_rho_recorded_for_bivariate_only(self):
        p = builtin("corr-pair")
        tb = run_bo(p, replace(FAST, method="bivariate"))
        ti = run_bo(p, replace(FAST, method="independent"))
        assert all(-0.999 <= r.rho_hat <= 0.999 for r in tb.rows[8:])
        assert all(math.isnan(r.rho_hat) for r in ti.rows)

    def test_deterministic(self):
        p = builtin("sin-cos")
        a = run_bo(p, replace(FAST, seed=11), replication=2)
        b = run_bo(p, replace(FAST, seed=11), replication=2)
        assert a.comparable() == b.comparable()

    def test_methods_share_initial_design(self):
        p = builtin("quad-linear")
        a = run_bo(p, replace(FAST, method="independent", steps=0))
        b = run_bo(p, replace(FAST, method="bivariate", steps=0))
        assert [r.x for r in a.rows] == [r.x for r in b.rows]

    def test_initial_size_too_small(self):
        with pytest.raises(ValueError):
            run_bo(builtin("quad-linear"), replace(FAST, initial_size=3))

    def test_no_feasible_start_is_flagged(self):
        p = Problem("hard", Domain.unit(2), lambda x: float(x[0] + x[1]), lambda x: float(x[0] * x[1]), 0.9)
        t = run_bo(p, replace(FAST, initial_size=6, steps=2))
        assert t.infeasible_phase_steps >= 1

    def test_quad_linear_single_seed_converges(self):
        p = builtin("quad-linear")
        cfg = ExperimentConfig(method="bivariate", initial_size=25, steps=60, replications=1, seed=0, record_timing=False)
        t = run_bo(p, cfg)
        assert t.rows[-1].best_feasible - p.known_optimum[1] <= 0.05


class TestStudies:
    def test_band_construction(self):
        mean, lo, hi = band([1.0, 2.0, 4.0])
        assert mean - lo == pytest.approx(hi - mean)
        assert hi - mean == pytest.approx(1.96 * np.std([1, 2, 4], ddof=1) / math.sqrt(3))
        assert band([2.5] * 5) == (2.5, 2.5, 2.5)

    def test_band_ignores_missing(self):
        assert band([math.nan, 1.0, 3.0])[0] == 2.0
        assert all(math.isnan(v) for v in band([math.nan]))

    def test_degenerate_problem_zero_width(self):
        flat = Problem("flat", Domain.unit(2), lambda x: 1.0, lambda x: 2.0, 0.0)
        study = replicate(FAST, flat)
        for step, mean, lo, hi in study.aggregate:
            assert lo == mean == hi == 1.0

    def test_replicate_needs_two(self):
        with pytest.raises(ValueError):
            replicate(replace(FAST, replications=1))

    def test_replications_differ_but_repeat(self):
        s1 = replicate(FAST)
        s2 = replicate(FAST)
        assert s1.aggregate == s2.aggregate
        assert s1.traces[0].comparable() != s1.traces[1].comparable()
        assert all(b <= a for a, b in zip([r[1] for r in s1.aggregate], [r[1] for r in s1.aggregate][1:]))

    def test_compare_to_self(self):
        cmp = compare(FAST, FAST)
        assert all(row[1] == 0.0 and row[2] == 0.0 and row[3] == 0.0 for row in cmp.rows)

    def test_compare_rejects_mismatch(self):
        with pytest.raises(ValueError, match="steps"):
            compare(FAST, replace(FAST, steps=5, method="independent"))

    def test_parallel_matches_serial(self):
        serial = replicate(replace(FAST, replications=2))
        parallel = replicate(replace(FAST, replications=2, workers=2))
        assert serial.aggregate == parallel.aggregate


class TestOutputs:
    def test_csv_layout(self, tmp_path):
        study = replicate(FAST)
        write_trace_csv(study.traces, tmp_path / "trace.csv", 2)
        write_aggregate_csv(study.aggregate, tmp_path / "aggregate.csv")
        rows = read_csv(tmp_path / "trace.csv")
        assert rows[0] == ["replication", "step", "x_1", "x_2", "y", "z", "feasible", "best_feasible",
                           "acq_value", "rho_hat", "wall_ms"]
        assert len(rows) == 1 + 3 * (8 + 4)
        assert {r[6] for r in rows[1:]} <= {"0", "1"}
        agg = read_csv(tmp_path / "aggregate.csv")
        assert agg[0] == ["step", "mean", "lo95", "hi95"] and len(agg) == 1 + 5
        assert [float(v) for v in agg[-1][1:]] == list(study.final[1:])

    def test_manifest(self):
        study = replicate(FAST)
        doc = manifest([FAST], study.traces)
        assert doc["configs"][0] == FAST.to_dict()
        assert doc["replication_seeds"] == [[0, 0], [0, 1], [0, 2]]
        assert set(doc["diagnostics"]) >= {"infeasible_phase_steps", "acq_fallbacks", "clamped_variances"}
        json.dumps(doc)

    def test_config_json(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(FAST.to_dict()))
        assert ExperimentConfig.from_json(path) == FAST
        path.write_text(json.dumps({"steps": 3, "colour": "red"}))
        with pytest.raises(ValueError, match="colour"):
            ExperimentConfig.from_json(path)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ExperimentConfig(method="random")
        with pytest.raises(ValueError):
            ExperimentConfig(replications=0)


class TestCli:
    ARGS = ["--initial-size", "8", "--steps", "3", "--candidates", "64", "--no-timing"]

    def test_list(self, capsys):
        assert cli.main(["list-problems"]) == 0
        assert "quad-linear" in capsys.readouterr().out

    def test_run(self, tmp_path, capsys):
        assert cli.main(["run", "--problem", "corr-pair", "--out", str(tmp_path), *self.ARGS]) == 0
        assert (tmp_path / "trace.csv").exists() and (tmp_path / "manifest.json").exists()
        out = capsys.readouterr().out
        assert "best feasible" in out or "no feasible" in out

    def test_replicate_and_compare(self, tmp_path):
        out = tmp_path / "rep"
        assert cli.main(["replicate", "--reps", "2", "--out", str(out), *self.ARGS]) == 0
        assert len(read_csv(out / "aggregate.csv")) == 1 + 4
        out = tmp_path / "cmp"
        assert cli.main(["compare", "--reps", "2", "--out", str(out), *self.ARGS]) == 0
        assert (out / "independent" / "trace.csv").exists() and (out / "bivariate" / "aggregate.csv").exists()
        assert read_csv(out / "compare.csv")[0] == ["step", "mean_diff", "lo95", "hi95"]
        doc = json.loads((out / "manifest.json").read_text())
        assert [c["method"] for c in doc["configs"]] == ["independent", "bivariate"]

    def test_config_file_and_override(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"problem": "corr-pair", "steps": 50, "initial_size": 8, "candidates": 64}))
        assert cli.main(["run", "--config", str(cfg), "--steps", "2", "--no-timing", "--out", str(tmp_path)]) == 0
        assert json.loads((tmp_path / "manifest.json").read_text())["configs"][0]["steps"] == 2

    def test_problem_file(self, tmp_path):
        pf = tmp_path / "poly.json"
        pf.write_text(json.dumps({
            "dimension": 2, "domain": [[0, 1], [0, 1]], "threshold_c": 0.5,
            "objective_terms": [{"exponents": [2, 0], "coefficient": 1.0}, {"exponents": [0, 2], "coefficient": 1.0}],
            "constraint_terms": [{"exponents": [1, 0], "coefficient": 1.0}, {"exponents": [0, 1], "coefficient": 1.0}],
        }))
        assert cli.main(["run", "--problem-file", str(pf), "--out", str(tmp_path), *self.ARGS]) == 0

    def test_bad_input_exit_code(self, tmp_path, capsys):
        assert cli.main(["run", "--problem", "missing", "--out", str(tmp_path)]) == 2
        assert "unknown problem" in capsys.readouterr().err
