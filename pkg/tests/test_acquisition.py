import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bicbo.acquisition import (
    AcqContext,
    AcqSettings,
    eci_bivariate,
    eci_independent,
    eci_mc_oracle,
    eci_terms,
    ei,
    feasibility_prob,
    incumbent,
    maximize_acquisition,
    mc_feasible_improvement,
)
from bicbo.bigp import BiPosterior
from bicbo.kernel import Domain
from bicbo.stats import BvnParams, bvn_cdf, norm_cdf, trunc_bvn_mean


def post(my=0.0, mz=0.0, sy=1.0, sz=1.0, rho=0.0):
    return BiPosterior(my, mz, sy * sy, sz * sz, rho * sy * sz)


def random_fixture(g, rho=None):
    sy, sz = g.uniform(0.05, 3, 2)
    r = g.uniform(-0.95, 0.95) if rho is None else rho
    p = post(g.normal(), g.normal(), sy, sz, r)
    ctx = AcqContext(p.mean_y + sy * g.uniform(-3, 3), p.mean_z + sz * g.uniform(-3, 3))
    return p, ctx


class TestEi:
    def test_at_incumbent(self):
        assert ei(0.0, 1.0, 0.0) == pytest.approx(0.3989422804, abs=1e-10)

    def test_degenerate(self):
        assert ei(-1.0, 0.0, 0.0) == 1.0
        assert ei(1.0, 0.0, 0.0) == 0.0

    def test_monte_carlo(self):
        g = np.random.default_rng(4)
        s = np.maximum(0.5 - g.standard_normal(10**7), 0.0)
        assert abs(ei(0.0, 1.0, 0.5) - s.mean()) <= 3 * s.std() / math.sqrt(s.size)

    @given(st.floats(-5, 5), st.floats(0, 9), st.floats(-5, 5), st.floats(0, 3))
    def test_nonnegative_and_monotone(self, m, v, y0, dy):
        a, b = ei(m, v, y0), ei(m, v, y0 + dy)
        assert 0.0 <= a <= b + 1e-15


class TestEciIndependent:
    def test_feasible_for_sure(self):
        assert eci_independent((0.2, 0.5), (100.0, 1.0), AcqContext(0.4, 0.0)) == pytest.approx(ei(0.2, 0.5, 0.4), abs=1e-12)

    def test_infeasible_for_sure(self):
        assert eci_independent((0.2, 0.5), (-100.0, 1.0), AcqContext(0.4, 0.0)) == 0.0

    def test_product_of_factors(self):
        assert eci_independent((0.0, 1.0), (0.3, 1.0), AcqContext(0.0, 0.3)) == pytest.approx(0.19947114, abs=1e-8)

    def test_indicator_for_zero_variance(self):
        assert feasibility_prob(1.0, 0.0, 1.0) == 1.0
        assert feasibility_prob(0.99, 0.0, 1.0) == 0.0

    @given(st.floats(-4, 4), st.floats(0, 4), st.floats(-4, 4), st.floats(0, 4), st.floats(-4, 4), st.floats(0, 2))
    def test_monotone_in_incumbent(self, my, vy, mz, vz, y0, dy):
        lo = eci_independent((my, vy), (mz, vz), AcqContext(y0, 0.0))
        hi = eci_independent((my, vy), (mz, vz), AcqContext(y0 + dy, 0.0))
        assert 0.0 <= lo <= hi + 1e-15


class TestEciBivariate:
    def test_rho_zero_identity(self, rng):
        for _ in range(300):
            p, ctx = random_fixture(rng, rho=0.0)
            ref = eci_independent((p.mean_y, p.var_y), (p.mean_z, p.var_z), ctx)
            assert abs(eci_bivariate(p, ctx) - ref) <= 1e-9

    def test_vectorized(self, rng):
        fx = [random_fixture(rng) for _ in range(40)]
        ctx = AcqContext(0.1, -0.2)
        P = BiPosterior(*(np.array([getattr(p, f) for p, _ in fx]) for f in ("mean_y", "mean_z", "var_y", "var_z", "cov_yz")))
        vec = eci_bivariate(P, ctx)
        assert np.allclose(vec, [eci_bivariate(p, ctx) for p, _ in fx], rtol=1e-14, atol=0)

    def test_unsatisfiable_constraint(self):
        for rho in (-0.9, 0.0, 0.5, 0.9):
            assert eci_bivariate(post(rho=rho), AcqContext(0.3, 60.0)) <= 1e-8

    def test_hopeless_incumbent_is_exactly_zero(self):
        p = post(rho=0.6)
        terms = eci_terms(p, AcqContext(-12.0, 0.0))
        assert terms.value == 0.0

    @pytest.mark.parametrize("rho", [-0.9, -0.3, 0.4, 0.95])
    def test_t2_underflow_returns_zero(self, rho):
        for y0 in (-9.0, -20.0, -200.0):
            t = eci_terms(post(0.0, 0.0, 1.0, 1.0, rho), AcqContext(y0, -1.0))
            assert t.value == 0.0 and np.isfinite(t.t3)

    def test_reported_example(self):
        p, ctx = post(rho=0.5), AcqContext(0.3, -0.2)
        closed = eci_bivariate(p, ctx)
        mc = mc_feasible_improvement(p, ctx, 10**7, seed=1)
        print(f"rho=0.5 example: closed form {closed:.6f}, sampling {mc.estimate:.6f} +- {mc.stderr:.1e}")
        t3 = eci_terms(p, ctx).t3
        assert abs(t3 - mc.region_prob) <= 4 * mc.region_stderr

    def test_factor_structure(self):
        # (t1 + t2) is the nested truncated mean gap and t3 the region probability
        p, ctx = post(0.2, -0.1, 1.3, 0.7, -0.4), AcqContext(0.5, 0.3)
        t = eci_terms(p, ctx)
        tm = trunc_bvn_mean(BvnParams(0.2, -0.1, 1.3, 0.7, -0.4), 0.5, 0.3)
        assert t.t1 + t.t2 == pytest.approx(0.5 - tm, abs=1e-12)
        a, b = (0.5 - 0.2) / 1.3, (0.3 + 0.1) / 0.7
        assert t.t3 == pytest.approx(norm_cdf(a) - bvn_cdf(a, b, -0.4), abs=1e-14)

    def test_t3_bounds(self, rng):
        for _ in range(500):
            p, ctx = random_fixture(rng)
            t = eci_terms(p, ctx)
            a = (ctx.y_min - p.mean_y) / math.sqrt(p.var_y)
            assert -1e-300 <= t.t3 <= norm_cdf(a) + 1e-10

    def test_nonnegative_and_finite(self, rng):
        for _ in range(500):
            p, ctx = random_fixture(rng)
            v = eci_bivariate(p, ctx)
            assert math.isfinite(v) and v >= 0.0

    def test_branch_continuity(self, rng):
        for _ in range(200):
            sz = rng.uniform(0.1, 2)
            p = post(rng.normal(), 0.0, rng.uniform(0.1, 2), sz, rng.uniform(-0.95, 0.95))
            ctx = AcqContext(p.mean_y + rng.uniform(0, 3), 8.0 * sz)
            below = eci_bivariate(p, ctx, switch=np.inf)
            above = eci_bivariate(p, ctx, switch=8.0 - 1e-12)
            assert abs(above - below) <= 1e-6 * max(abs(below), 1e-300)

    def test_leading_order_tail(self):
        # the leading-order tail is the printed t1' = y_min - mu_y - rho sigma_y (c - mu_z) / sigma_z
        p, ctx = post(0.1, 0.0, 1.2, 0.5, -0.7), AcqContext(0.9, 5.0)
        t = eci_terms(p, ctx, leading_order=True)
        assert t.t1 == pytest.approx(0.9 - 0.1 + 0.7 * 1.2 * 5.0 / 0.5, abs=1e-12)

    def test_degenerate_variances(self):
        ctx = AcqContext(0.5, 0.0)
        assert eci_bivariate(BiPosterior(0.2, 0.4, 0.0, 1.0, 0.0), ctx) == pytest.approx(0.3 * norm_cdf(0.4), abs=1e-15)
        assert eci_bivariate(BiPosterior(0.2, 0.4, 1.0, 0.0, 0.0), ctx) == pytest.approx(ei(0.2, 1.0, 0.5), abs=1e-15)
        assert eci_bivariate(BiPosterior(0.2, -0.4, 1.0, 0.0, 0.0), ctx) == 0.0


class TestMcOracle:
    def test_matches_independent(self):
        p, ctx = post(0.3, 0.1, 0.8, 1.4, 0.0), AcqContext(0.5, -0.3)
        est, se = eci_mc_oracle(p, ctx, 10**6, seed=2)
        assert abs(est - eci_independent((0.3, 0.64), (0.1, 1.96), ctx)) <= 4 * se

    def test_hopeless(self):
        p = post(rho=0.3)
        est, _ = eci_mc_oracle(p, AcqContext(-10.0, 0.0), 10**6, seed=0)
        assert est <= 1e-8

    def test_seeds_agree(self):
        p, ctx = post(rho=0.9), AcqContext(0.2, 0.1)
        e1, s1 = eci_mc_oracle(p, ctx, 10**6, seed=10)
        e2, s2 = eci_mc_oracle(p, ctx, 10**6, seed=11)
        assert e1 != e2 and abs(e1 - e2) <= 4 * math.hypot(s1, s2)

    def test_deterministic_and_minimum(self):
        p, ctx = post(rho=-0.2), AcqContext(0.0, 0.0)
        assert eci_mc_oracle(p, ctx, 10**4, seed=3) == eci_mc_oracle(p, ctx, 10**4, seed=3)
        with pytest.raises(ValueError):
            eci_mc_oracle(p, ctx, 100)


class TestIncumbent:
    def test_feasible_minimum(self):
        assert incumbent([3.0, 1.0, 2.0], [1.0, 0.0, 1.0], 0.5) == (2.0, True)

    def test_no_feasible(self):
        assert incumbent([3.0, 1.0], [0.0, 0.0], 0.5) == (1.0, False)


class TestMaximize:
    def test_unimodal(self):
        res = maximize_acquisition(lambda X: -((X[:, 0] - 0.7) ** 2), Domain.unit(1), seed=0)
        assert abs(res.x[0] - 0.7) <= 0.01 and not res.fallback

    def test_constant_surface_uses_fallback(self):
        res = maximize_acquisition(
            lambda X: np.zeros(len(X)), Domain.unit(2), AcqSettings(candidates=256),
            seed=0, fallback=lambda X: -np.sum((X - 0.25) ** 2, axis=1),
        )
        assert res.fallback and res.value == 0.0
        assert np.linalg.norm(res.x - 0.25) < 0.1

    def test_multimodal_against_grid(self):
        def f(X):
            return np.sin(13 * X[:, 0]) * np.sin(27 * X[:, 0]) * np.cos(9 * X[:, 1]) + 1.0

        g = np.linspace(0, 1, 1001)
        G = np.array(np.meshgrid(g, g)).reshape(2, -1).T
        grid_max = f(G).max()
        res = maximize_acquisition(f, Domain.unit(2), seed=5)
        assert res.value >= 0.99 * grid_max
        assert f(res.x[None])[0] == pytest.approx(res.value)

    def test_one_dimensional_dense_grid(self):
        def f(X):
            x = X[:, 0]
            return np.exp(-((x - 0.15) ** 2) / 0.002) + 1.3 * np.exp(-((x - 0.83) ** 2) / 0.0005)

        g = np.linspace(0, 1, 10**4)[:, None]
        res = maximize_acquisition(f, Domain.unit(1), seed=1)
        assert res.value >= 0.99 * f(g).max()

    def test_deterministic_and_in_domain(self):
        dom = Domain((0.0, -2.0), (6.0, 2.0))
        f = lambda X: np.cos(X[:, 0]) + np.sin(X[:, 1])
        a = maximize_acquisition(f, dom, seed=7)
        b = maximize_acquisition(f, dom, seed=7)
        assert np.array_equal(a.x, b.x) and a.value == b.value
        assert dom.contains(a.x)
