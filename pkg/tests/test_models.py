import math

import numpy as np
import pytest

from volterra_weak.kernels import Kernel, covariance
from volterra_weak.markovian import build_rule, to_kernel
from volterra_weak.models import (
    Variant,
    custom,
    dissipation,
    euler_evolve,
    rough_bergomi,
    validate_hypotheses,
)
from volterra_weak.sampler import PathBundle, TimeGrid, factorize_joint, sample_exact


def bundle_for(kernel, n, N, seed, rho=0.0, T=1.0):
    return sample_exact(factorize_joint(kernel, TimeGrid.uniform(T, n)), rho, seed, N)


class TestConstruction:
    def test_rough_bergomi_defaults(self):
        m = rough_bergomi(1.0, 0.1)
        assert m.variant is Variant.ROUGH_BERGOMI
        assert m.scale == pytest.approx(math.sqrt(0.2))
        np.testing.assert_allclose(m.variance(np.array([0.25, 1.0])), [0.25**0.2, 1.0], rtol=1e-14)

    def test_rough_bergomi_coefficients(self):
        m = rough_bergomi(0.8, 0.2, rho=0.3)
        t, v = 0.5, 0.7
        var = 0.5**0.4
        assert m.b(t, v) == pytest.approx(-0.5 * math.exp(0.8 * v - 0.32 * var))
        assert m.sigma(t, v) == pytest.approx(math.exp(0.4 * v - 0.16 * var))

    @pytest.mark.parametrize("H", [0.05, 0.1, 0.25])
    def test_normaliser_matches_reference_covariance(self, H):
        for m in (rough_bergomi(1.0, H), dissipation(0.5, H, scale=1.3)):
            t = np.array([1e-3, 0.2, 0.7, 1.0])
            np.testing.assert_allclose(covariance(m.reference_kernel(), t, t), m.variance(t), rtol=1e-8)

    @pytest.mark.parametrize("rho", [-0.5, 1.2])
    def test_rho_range(self, rho):
        with pytest.raises(ValueError):
            rough_bergomi(1.0, 0.1, rho=rho)

    def test_nu_positive(self):
        with pytest.raises(ValueError):
            dissipation(0.0, 0.1)

    def test_custom_without_normaliser(self):
        m = custom("1", "0")
        with pytest.raises(ValueError):
            m.variance(1.0)
        with pytest.raises(ValueError):
            m.reference_kernel()


class TestEuler:
    def test_deterministic_drift(self):
        b = bundle_for(Kernel.fractional(0.1), 16, 10, seed=0)
        res = euler_evolve(custom("1", "0", X0=0.5), b)
        np.testing.assert_allclose(res.terminal, 1.5, rtol=1e-14)

    @pytest.mark.parametrize("rho", [0.0, 0.4, 1.0])
    def test_unit_diffusion_variance(self, rho):
        b = bundle_for(Kernel.fractional(0.1), 8, 100000, seed=3, rho=rho)
        res = euler_evolve(custom("0", "1", rho=rho), b)
        assert abs(res.terminal.var() - 1.0) < 0.03

    def test_path_output(self):
        b = bundle_for(Kernel.fractional(0.2), 8, 5, seed=1)
        res = euler_evolve(custom("t", "0"), b, return_path=True)
        assert res.path.shape == (5, 9)
        np.testing.assert_allclose(res.path[:, -1], res.terminal)
        np.testing.assert_allclose(res.path[0], np.concatenate([[0.0], np.cumsum(b.grid.t[:-1] * b.grid.dt)]))

    def test_dissipation_is_pure_drift(self):
        b = bundle_for(Kernel.fractional(0.1), 8, 50, seed=2)
        m = dissipation(0.5, 0.1)
        res = euler_evolve(m, b)
        eps = m.b(b.grid.t[:-1], b.V[:, :-1])
        np.testing.assert_allclose(res.terminal, eps @ b.grid.dt, rtol=1e-13)

    def test_dissipation_mean_one(self):
        H, nu, N = 0.1, 0.5, 100000
        b = bundle_for(Kernel.fractional(H), 16, N, seed=4)
        m = dissipation(nu, H)
        eps = m.b(b.grid.t[:-1], b.V[:, :-1])
        var = m.variance(b.grid.t[:-1])
        sd = np.sqrt(np.expm1(nu**2 * var))
        assert np.all(np.abs(eps.mean(axis=0) - 1) < 4 * sd / math.sqrt(N) + 1e-15)

    def test_rejections_counted(self):
        b = bundle_for(Kernel.fractional(0.1), 4, 6, seed=5)
        V = b.V.copy()
        V[2, 1] = np.inf
        res = euler_evolve(custom("v", "0"), PathBundle(b.grid, b.dW, b.dWhat, V, 0.0))
        assert res.rejection_count == 1
        assert np.isnan(res.terminal[2])
        assert np.all(np.isfinite(np.delete(res.terminal, 2)))

    def test_time_step_bias_shrinks(self):
        # dX = W dW with K = 1: E[X_T^2] under Euler is (1 - 1/n) T^2 / 2
        N = 100000
        est = []
        for n in (2, 4, 8):
            b = bundle_for(Kernel.fractional(0.5), n, N, seed=10 + n, rho=1.0)
            x = euler_evolve(custom("0", "v", rho=1.0), b).terminal
            est.append(np.mean(x**2))
            assert est[-1] == pytest.approx(0.5 * (1 - 1 / n), abs=5 * x.var() ** 0.5 * 1.5 / math.sqrt(N))
        gaps = np.abs(np.diff(est))
        assert gaps[1] < gaps[0]


class TestValidate:
    def test_truncated_pair_passes(self):
        r = validate_hypotheses(rough_bergomi(1.0, 0.3), Kernel.fractional(0.3), Kernel.truncated(0.3, 0.01))
        assert r.passed
        assert r.domination_constant == 1.0

    def test_H_out_of_range(self):
        r = validate_hypotheses(None, Kernel.fractional(0.7))
        assert not r.passed
        assert any("H outside (0,1/2)" in v for v in r.violations)

    def test_markovian_pair(self):
        kbar = to_kernel(build_rule(0.1, 1.0, 8, 2))
        r = validate_hypotheses(dissipation(0.5, 0.1), Kernel.fractional(0.1), kbar)
        assert r.passed
        assert np.isfinite(r.domination_constant) and r.domination_constant <= 1.0

    def test_half_warns(self):
        r = validate_hypotheses(None, Kernel.fractional(0.5))
        assert r.passed and r.warnings

    def test_custom_unchecked(self):
        r = validate_hypotheses(custom("v", "1"), Kernel.fractional(0.2))
        assert any("unchecked" in n for n in r.notes)

    def test_growth_envelope_recorded(self):
        r = validate_hypotheses(rough_bergomi(0.8, 0.2), Kernel.fractional(0.2))
        assert any("nu_b = 0.8" in n and "nu_sigma = 0.4" in n for n in r.notes)

    def test_not_dominated(self):
        bad = Kernel.sum_of_exponentials([0.0], [1.0])
        r = validate_hypotheses(None, Kernel.truncated(0.2, 0.1, scale=0.0), bad)
        assert not r.passed
