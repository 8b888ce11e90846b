import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gamma as gamma_fn

from volterra_weak.kernels import Family, Kernel, l2_norm_sq
from volterra_weak.markovian import (
    QuadratureRule,
    RuleConditioningError,
    build_rule,
    ladder_rule,
    laplace_density,
    to_kernel,
    truncated_laplace,
)
from volterra_weak.quadrature import integrate

mp.mp.dps = 30


def l2_gap(H, kbar, T=1.0):
    """||K - Kbar||_{L2[0,T]} by graded quadrature."""
    K = Kernel.fractional(H)
    sq = integrate(lambda s: (K(s) - kbar(s)) ** 2, 0.0, T, alpha=2 * (H - 0.5), rtol=1e-11, atol=1e-14)
    return math.sqrt(sq)


class TestLaplaceDensity:
    @pytest.mark.parametrize("t, expected", [(1.0, 1.0), (0.25, 0.25**-0.25)])
    def test_laplace_transform(self, t, expected):
        H = 0.25
        lam = lambda x: x ** (-mp.mpf(H) - 0.5) / mp.gamma(0.5 - mp.mpf(H))  # noqa: E731
        # x = y**4 removes the x**(-3/4) singularity
        oracle = mp.quad(lambda y: mp.exp(-t * y**4) * lam(y**4) * 4 * y**3, [0, 1, mp.inf])
        assert float(oracle) == pytest.approx(expected, rel=1e-14)
        assert laplace_density(H, 2.0) == pytest.approx(float(lam(2.0)), rel=1e-14)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.01, 0.49), st.floats(1e-8, 1e8))
    def test_positive(self, H, x):
        assert laplace_density(H, x) > 0

    @pytest.mark.parametrize("x", [0.0, -1.0])
    def test_domain(self, x):
        with pytest.raises(ValueError):
            laplace_density(0.1, x)

    def test_full_range_recovers_kernel(self):
        t = np.array([1e-3, 0.1, 1.0, 7.0])
        np.testing.assert_allclose(truncated_laplace(0.1, t, 0.0, np.inf), t**-0.4, rtol=1e-13)

    def test_truncated_laplace_oracle(self):
        H, t, lo, hi = 0.1, 0.3, 2.0, 500.0
        lam = lambda x: x ** (-mp.mpf(H) - 0.5) / mp.gamma(0.5 - mp.mpf(H))  # noqa: E731
        oracle = mp.quad(lambda x: mp.exp(-t * x) * lam(x), [lo, 10, 100, hi])
        assert truncated_laplace(H, t, lo, hi) == pytest.approx(float(oracle), rel=1e-12)


class TestBuildRule:
    def test_single_point_single_cell(self):
        H, a, b = 0.1, 0.5, 20.0
        rule = build_rule(H, 1.0, 1, 1, cuts=(a, b))
        beta = H + 0.5
        mass = (b ** (1 - beta) - a ** (1 - beta)) / ((1 - beta) * gamma_fn(0.5 - H))
        first = (b ** (2 - beta) - a ** (2 - beta)) / ((2 - beta) * gamma_fn(0.5 - H))
        assert rule.weights[0] == pytest.approx(mass, rel=1e-13)
        assert rule.nodes[0] == pytest.approx(first / mass, rel=1e-13)
        lam = lambda x: x ** (-mp.mpf(H) - 0.5) / mp.gamma(0.5 - mp.mpf(H))  # noqa: E731
        assert rule.weights[0] == pytest.approx(float(mp.quad(lam, [a, b])), rel=1e-13)

    @pytest.mark.parametrize("H", [0.05, 0.1, 0.25, 0.4])
    @pytest.mark.parametrize("m, p", [(1, 1), (4, 2), (10, 3), (20, 4)])
    def test_positive_weights_sorted_nodes(self, H, m, p):
        rule = build_rule(H, 1.0, m, p)
        assert len(rule) == m * p
        assert np.all(np.asarray(rule.weights) > 0)
        assert np.all(np.diff(rule.nodes) > 0)
        lo, hi = rule.design.cut_low, rule.design.cut_high
        assert lo <= min(rule.nodes) and max(rule.nodes) <= hi

    def test_default_cuts(self):
        rule = build_rule(0.1, 2.0, 4, 2, dt=0.01)
        assert rule.design.cut_low == pytest.approx(0.05)
        assert rule.design.cut_high == pytest.approx(1000.0)

    def test_exact_on_polynomials(self):
        H, p = 0.2, 3
        rule = build_rule(H, 1.0, 1, p, cuts=(1.0, 4.0))
        lam = lambda x: x ** (-mp.mpf(H) - 0.5) / mp.gamma(0.5 - mp.mpf(H))  # noqa: E731
        for k in range(2 * p):
            exact = float(mp.quad(lambda x: x**k * lam(x), [1, 4]))
            got = float(np.dot(np.asarray(rule.nodes) ** k, rule.weights))
            assert got == pytest.approx(exact, rel=1e-11)

    @pytest.mark.parametrize("H", [0.05, 0.1, 0.25])
    @pytest.mark.parametrize("m, p, cuts", [(8, 2, None), (20, 3, (1e-3, 1e5)), (40, 4, (1e-12, 1e8))])
    def test_dominated_by_fractional(self, H, m, p, cuts):
        kbar = to_kernel(build_rule(H, 1.0, m, p, cuts=cuts))
        t = np.logspace(-6, 1, 3000)
        assert np.all(kbar(t) <= Kernel.fractional(H)(t))

    @pytest.mark.parametrize("H", [0.05, 0.1, 0.25])
    def test_completely_monotone_shape(self, H):
        kbar = to_kernel(build_rule(H, 1.0, 12, 3))
        t = np.linspace(0.0, 2.0, 2001)
        v = kbar(t)
        assert np.all(v >= 0)
        assert np.all(np.diff(v) <= 0)
        assert np.all(np.diff(v, 2) >= -1e-12 * v[:-2])

    @pytest.mark.parametrize("H", [0.05, 0.1, 0.25])
    @pytest.mark.parametrize("m, p", [(6, 2), (10, 3), (16, 2)])
    def test_reconstruction_within_tolerance(self, H, m, p):
        rule = build_rule(H, 1.0, m, p)
        assert np.isfinite(rule.tolerance)
        assert rule.reconstruction_error(1.0) <= rule.tolerance

    def test_many_nodes_reach_one(self):
        kbar = to_kernel(build_rule(0.1, 1.0, 40, 4, cuts=(1e-12, 1e8)))
        assert abs(kbar(1.0) - 1.0) < 1e-3

    def test_refinement_with_wide_cuts(self):
        coarse = to_kernel(build_rule(0.1, 1.0, 10, 2, cuts=(1e-4, 1e6)))
        fine = to_kernel(build_rule(0.1, 1.0, 20, 2, cuts=(1e-4, 1e6)))
        assert l2_gap(0.1, fine) < l2_gap(0.1, coarse)

    def test_ill_conditioned(self):
        with pytest.raises(RuleConditioningError):
            build_rule(0.1, 1.0, 1, 16, cuts=(1e-6, 1e6))

    @pytest.mark.parametrize("kwargs", [dict(m=0, p=1), dict(m=1, p=0), dict(m=1, p=1, cuts=(2.0, 1.0))])
    def test_invalid_design(self, kwargs):
        with pytest.raises(ValueError):
            build_rule(0.1, 1.0, **kwargs)

    def test_lumped_tail(self):
        H = 0.1
        plain = build_rule(H, 1.0, 8, 2, cuts=(0.1, 1e4))
        lumped = build_rule(H, 1.0, 8, 2, cuts=(0.1, 1e4), lump_tail=True)
        assert len(lumped) == len(plain) + 1
        tail_mass = float(mp.quad(lambda x: x ** (-mp.mpf(H) - 0.5), [0, 0.1]) / mp.gamma(0.4))
        assert lumped.weights[0] == pytest.approx(tail_mass, rel=1e-12)
        assert lumped.reconstruction_error(1.0) <= lumped.tolerance


class TestLadder:
    @pytest.mark.parametrize("H", [0.05, 0.1, 0.25])
    def test_strictly_decreasing(self, H):
        gaps = [l2_gap(H, to_kernel(ladder_rule(H, 1.0, n))) for n in (4, 8, 16, 32)]
        assert all(b < a for a, b in zip(gaps, gaps[1:]))

    def test_cuts_widen_proportionally(self):
        r4, r8 = ladder_rule(0.1, 1.0, 4), ladder_rule(0.1, 1.0, 8)
        assert r8.design.cut_high / r8.design.cut_low == pytest.approx((r4.design.cut_high / r4.design.cut_low) ** 2)
        assert math.sqrt(r8.design.cut_high * r8.design.cut_low) == pytest.approx(1.0)

    def test_node_count_multiple(self):
        with pytest.raises(ValueError):
            ladder_rule(0.1, 1.0, 5)


class TestToKernel:
    def test_empty(self):
        with pytest.raises(ValueError):
            to_kernel(QuadratureRule((), ()))

    def test_constant(self):
        k = to_kernel(QuadratureRule((0.0,), (1.0,)))
        assert k.family is Family.SUM_OF_EXPONENTIALS
        assert k(3.7) == 1.0
        assert l2_norm_sq(k, 2.5) == pytest.approx(2.5, rel=1e-15)

    def test_scale(self):
        rule = build_rule(0.1, 1.0, 4, 2)
        k1, k2 = to_kernel(rule), to_kernel(rule, scale=2.0)
        assert k2(0.3) == pytest.approx(2.0 * k1(0.3), rel=1e-15)

    def test_matches_rule(self):
        rule = build_rule(0.25, 1.0, 6, 2)
        t = np.linspace(0, 1, 11)
        np.testing.assert_allclose(to_kernel(rule)(t), rule(t), rtol=1e-14)
