import math

import numpy as np
import pytest

from volterra_weak.kernels import Kernel, covariance
from volterra_weak.markovian import build_rule, to_kernel
from volterra_weak.quadrature import integrate
from volterra_weak.sampler import (
    FactorizationError,
    TimeGrid,
    cross_covariance,
    factor_psd,
    factorize_joint,
    joint_covariance,
    ou_step_law,
    psd_cholesky,
    sample_exact,
    sample_markovian,
)

KERNELS = {
    "fractional": Kernel.fractional(0.1),
    "smoothed": Kernel.smoothed(0.1, 0.01),
    "truncated": Kernel.truncated(0.1, 0.01),
    "soe": to_kernel(build_rule(0.1, 1.0, 8, 2)),
}


class TestTimeGrid:
    def test_uniform(self):
        g = TimeGrid.uniform(2.0, 4)
        assert g.n == 4 and g.T == 2.0
        np.testing.assert_allclose(g.dt, 0.5)

    @pytest.mark.parametrize("times", [(0.0,), (0.1, 1.0), (0.0, 0.5, 0.5), (0.0, 1.0, 0.5)])
    def test_invalid(self, times):
        with pytest.raises(ValueError):
            TimeGrid(times)


class TestCovarianceBlocks:
    def test_constant_kernel_cross(self):
        g = TimeGrid.uniform(1.0, 4)
        C = cross_covariance(Kernel.fractional(0.5), g)
        expected = np.tril(np.full((4, 4), 0.25))
        np.testing.assert_allclose(C, expected, rtol=1e-15)

    @pytest.mark.parametrize("name", sorted(KERNELS))
    def test_cross_oracle(self, name):
        k = KERNELS[name]
        g = TimeGrid((0.0, 0.1, 0.35, 0.6, 1.0))
        C = cross_covariance(k, g)
        t = g.t
        for i in range(g.n):
            for j in range(g.n):
                lo, hi = t[j], min(t[j + 1], t[i + 1])
                if lo >= t[i + 1]:
                    assert C[i, j] == 0.0
                    continue
                ti = t[i + 1]
                # substitute r = ti - u so the singularity sits at the origin
                oracle = integrate(k, ti - hi, ti - lo, alpha=k.singular_exponent, breakpoints=k.breakpoints)
                assert C[i, j] == pytest.approx(oracle, rel=1e-9, abs=1e-12)

    def test_fractional_quarter_variance(self):
        g = TimeGrid.uniform(1.0, 4)
        C = joint_covariance(Kernel.fractional(0.25), g)
        assert C[-1, -1] == pytest.approx(2.0, rel=1e-14)

    @pytest.mark.parametrize("name", sorted(KERNELS))
    def test_factor_reproduces_covariance(self, name):
        g = TimeGrid.uniform(1.0, 64)
        fact = factorize_joint(KERNELS[name], g)
        C = joint_covariance(KERNELS[name], g)
        LL = fact.L @ fact.L.T
        scale = np.sqrt(np.outer(np.diag(C), np.diag(C)))
        assert np.max(np.abs(LL - C) / scale) < 1e-8
        assert np.allclose(np.triu(fact.L, 1), 0.0)
        assert fact.jitter == 0.0

    def test_nonuniform_grid(self):
        g = TimeGrid(tuple(np.linspace(0, 1, 33) ** 2))
        fact = factorize_joint(Kernel.fractional(0.1), g)
        C = joint_covariance(Kernel.fractional(0.1), g)
        assert np.max(np.abs(fact.L @ fact.L.T - C)) < 1e-10 * np.max(np.abs(C))


class TestPsdFactor:
    def test_singular_psd(self):
        v = np.array([[1.0, 2.0, 3.0]])
        S = v.T @ v
        L = psd_cholesky(S, 1e-14)
        np.testing.assert_allclose(L @ L.T, S, atol=1e-14)

    def test_indefinite_fails(self):
        S = np.array([[1.0, 0.0], [0.0, -1.0]])
        with pytest.raises(FactorizationError, match="most negative eigenvalue -1"):
            factor_psd(S, 1.0)

    def test_jitter_recorded(self):
        S = np.array([[1.0, 0.0], [0.0, -5e-13]])
        _, jitter = factor_psd(S, 1.0)
        assert jitter == 1e-12


class TestSampleExact:
    def test_constant_kernel_is_brownian(self):
        g = TimeGrid.uniform(1.0, 4)
        fact = factorize_joint(Kernel.fractional(0.5), g)
        b = sample_exact(fact, 0.0, seed=3, n_paths=50)
        np.testing.assert_allclose(b.V[:, 1:], np.cumsum(b.dW, axis=1), atol=1e-12)

    def test_zero_kernel(self):
        g = TimeGrid.uniform(1.0, 1)
        fact = factorize_joint(Kernel.fractional(0.3, scale=0.0), g)
        b = sample_exact(fact, 0.5, seed=1, n_paths=10)
        assert np.all(b.V == 0.0)

    def test_initial_value_zero(self):
        fact = factorize_joint(KERNELS["fractional"], TimeGrid.uniform(1.0, 8))
        b = sample_exact(fact, 0.3, seed=0, n_paths=20)
        assert np.all(b.V[:, 0] == 0.0)

    def test_deterministic(self):
        fact = factorize_joint(KERNELS["smoothed"], TimeGrid.uniform(1.0, 8))
        a = sample_exact(fact, 0.3, seed=9, n_paths=5, first=2)
        b = sample_exact(fact, 0.3, seed=9, n_paths=5, first=2)
        np.testing.assert_array_equal(a.V, b.V)

    def test_shared_increments_across_kernels(self):
        g = TimeGrid.uniform(1.0, 16)
        bundles = [sample_exact(factorize_joint(k, g), 0.5, seed=4, n_paths=30) for k in KERNELS.values()]
        markov = sample_markovian(KERNELS["soe"], g, 0.5, seed=4, n_paths=30)
        for b in bundles[1:] + [markov]:
            np.testing.assert_array_equal(b.dW, bundles[0].dW)
            np.testing.assert_array_equal(b.dWhat, bundles[0].dWhat)

    @pytest.mark.parametrize("rho", [-0.1, 1.5])
    def test_rho_range(self, rho):
        fact = factorize_joint(KERNELS["fractional"], TimeGrid.uniform(1.0, 2))
        with pytest.raises(ValueError):
            sample_exact(fact, rho, seed=0)

    def test_dB_variance(self):
        g = TimeGrid.uniform(1.0, 8)
        b = sample_exact(factorize_joint(KERNELS["truncated"], g), 0.6, seed=12, n_paths=40000)
        var = b.dB.var(axis=0)
        np.testing.assert_allclose(var, g.dt, rtol=0.03)
        assert b.rho_hat == pytest.approx(0.8)

    def test_moments_of_terminal_value(self):
        K = KERNELS["fractional"]
        g = TimeGrid.uniform(1.0, 32)
        b = sample_exact(factorize_joint(K, g), 0.0, seed=77, n_paths=100000)
        target = K.l2_norm_sq(1.0)
        vt = b.V[:, -1]
        assert abs(vt.mean()) < 4 * math.sqrt(target / vt.size)
        assert abs(vt.var() / target - 1) < 0.03

    def test_cross_moment(self):
        K = KERNELS["fractional"]
        g = TimeGrid.uniform(1.0, 8)
        b = sample_exact(factorize_joint(K, g), 0.0, seed=8, n_paths=50000)
        emp = np.mean(b.V[:, 3] * b.V[:, 8])
        assert emp == pytest.approx(covariance(K, g.t[3], 1.0), rel=0.05)


class TestOUStepLaw:
    def test_single_node(self):
        law = ou_step_law([1.0], 1.0)
        var_total = law.loading[0] ** 2 * 1.0 + law.factor[0, 0] ** 2
        assert var_total == pytest.approx((1 - math.exp(-2)) / 2, rel=1e-14)
        assert law.loading[0] * 1.0 == pytest.approx(1 - math.exp(-1), rel=1e-14)
        assert var_total == pytest.approx(0.432332, abs=1e-6)
        oracle = integrate(lambda u: np.exp(-2 * (1 - u)), 0.0, 1.0)
        assert var_total == pytest.approx(oracle, rel=1e-12)

    def test_zero_node_degenerates(self):
        law = ou_step_law([0.0, 2.0], 0.5)
        assert law.loading[0] == 1.0
        assert np.all(law.factor[0] == 0.0)

    def test_zero_node_is_brownian(self):
        k = Kernel.sum_of_exponentials([0.0], [1.0])
        g = TimeGrid.uniform(1.0, 16)
        b = sample_markovian(k, g, 0.0, seed=2, n_paths=20)
        np.testing.assert_allclose(b.V[:, 1:], np.cumsum(b.dW, axis=1), atol=1e-12)

    def test_requires_soe(self):
        with pytest.raises(ValueError):
            sample_markovian(Kernel.fractional(0.1), TimeGrid.uniform(1.0, 2), 0.0, seed=0)


class TestMarkovianSampler:
    def test_variance_matches_norm(self):
        k = KERNELS["soe"]
        g = TimeGrid.uniform(1.0, 32)
        b = sample_markovian(k, g, 0.0, seed=31, n_paths=100000)
        assert abs(b.V[:, -1].var() / k.l2_norm_sq(1.0) - 1) < 0.03

    def test_agrees_with_exact_sampler(self):
        k = KERNELS["soe"]
        g = TimeGrid.uniform(1.0, 32)
        N = 100000
        m = sample_markovian(k, g, 0.0, seed=5, n_paths=N).V[:, -1]
        e = sample_exact(factorize_joint(k, g), 0.0, seed=6, n_paths=N).V[:, -1]
        s2 = k.l2_norm_sq(1.0)
        assert abs(m.mean() - e.mean()) < 3 * math.sqrt(2 * s2 / N)
        assert abs(m.var() - e.var()) < 3 * math.sqrt(2 * 2 * s2**2 / N)

    def test_path_covariance(self):
        k = KERNELS["soe"]
        g = TimeGrid((0.0, 0.2, 0.5, 0.55, 1.0))
        b = sample_markovian(k, g, 0.0, seed=10, n_paths=60000)
        C = covariance(k, g.t[1:, None], g.t[None, 1:])
        emp = np.cov(b.V[:, 1:].T)
        np.testing.assert_allclose(emp, C, rtol=0.05, atol=0.02 * C.max())
