"""Exact Gaussian sampling of Brownian increments and Volterra values.

Per replication the stacked vector ``(dW_1..dW_n, V_{t_1}..V_{t_n})`` is
drawn from its exact joint law through a block Cholesky factor.  The
increment block of that factor is ``diag(sqrt(dt))`` for every kernel, so
two kernels sampled with the same seed share their increments bit for bit,
and their Volterra values differ only through the kernel-dependent blocks.

Normals are consumed per replication in a fixed layout: ``n`` for ``dW``,
``n`` for ``dWhat``, then the kernel-specific residual draws.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import rng
from .kernels import Family, Kernel, covariance


class FactorizationError(ArithmeticError):
    """Covariance matrix could not be factorised even with the largest jitter."""


JITTERS = (0.0, 1e-14, 1e-12, 1e-10)


@dataclass(frozen=True)
class TimeGrid:
    times: tuple[float, ...]

    def __post_init__(self):
        t = tuple(float(x) for x in self.times)
        object.__setattr__(self, "times", t)
        if len(t) < 2 or t[0] != 0.0:
            raise ValueError("grid must start at 0 and contain at least one step")
        if np.any(np.diff(t) <= 0):
            raise ValueError("grid times must be strictly increasing")

    @classmethod
    def uniform(cls, T, n):
        if n < 1 or T <= 0:
            raise ValueError("need T > 0 and n >= 1")
        return cls(tuple(np.linspace(0.0, T, n + 1)))

    @property
    def T(self):
        return self.times[-1]

    @property
    def n(self):
        return len(self.times) - 1

    @cached_property
    def t(self):
        return np.asarray(self.times)

    @cached_property
    def dt(self):
        return np.diff(self.t)


@dataclass(frozen=True)
class PathBundle:
    """Sampled paths on ``grid``; arrays carry a leading replication axis.

    ``dW``, ``dWhat`` have shape ``(R, n)``; ``V`` has shape ``(R, n + 1)``
    with ``V[:, 0] == 0``.
    """

    grid: TimeGrid
    dW: np.ndarray = field(repr=False)
    dWhat: np.ndarray = field(repr=False)
    V: np.ndarray = field(repr=False)
    rho: float

    @property
    def rho_hat(self):
        return float(np.sqrt(1.0 - self.rho**2))

    @property
    def dB(self):
        return self.rho * self.dW + self.rho_hat * self.dWhat


def psd_cholesky(S, tol):
    """Lower-triangular ``L`` with ``L @ L.T ~= S`` for positive semidefinite ``S``.

    Pivots within ``tol`` of zero mark directions with no residual variance;
    their columns are set to zero.  Returns ``None`` when a pivot is below
    ``-tol``.
    """
    n = S.shape[0]
    L = np.zeros_like(S)
    for j in range(n):
        d = S[j, j] - L[j, :j] @ L[j, :j]
        if d > tol:
            L[j, j] = np.sqrt(d)
            L[j + 1 :, j] = (S[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
        elif d < -tol:
            return None
    return L


def factor_psd(S, reference):
    """Apply :func:`psd_cholesky` with escalating jitter relative to ``reference``.

    Returns ``(L, jitter)`` where ``jitter`` is the relative level used.
    """
    for level in JITTERS:
        eps = max(level, 1e-14) * reference
        L = psd_cholesky(S + level * reference * np.eye(len(S)), eps)
        if L is not None:
            return L, level
    worst = float(np.linalg.eigvalsh(S).min())
    raise FactorizationError(
        f"covariance not positive semidefinite after jitter {JITTERS[-1]:g}; "
        f"most negative eigenvalue {worst:.3e}"
    )


def cross_covariance(kernel, grid):
    """``Cov(V_{t_i}, dW_j) = int_{t_{j-1}}^{min(t_j, t_i)} K(t_i - u) du`` as an ``(n, n)`` array."""
    t = grid.t
    ti = t[1:, None]
    lo = t[None, :-1]
    hi = t[None, 1:]
    active = lo < ti
    upper = np.where(active, ti - lo, 0.0)
    lower = np.where(active, ti - np.minimum(hi, ti), 0.0)
    return np.where(active, kernel.integral(upper) - kernel.integral(lower), 0.0)


def joint_covariance(kernel, grid):
    """Analytic ``2n x 2n`` covariance of ``(dW, V)`` on the grid."""
    n = grid.n
    ti = grid.t[1:]
    cvv = covariance(kernel, ti[:, None], ti[None, :])
    cvw = cross_covariance(kernel, grid)
    C = np.zeros((2 * n, 2 * n))
    C[:n, :n] = np.diag(grid.dt)
    C[n:, :n] = cvw
    C[:n, n:] = cvw.T
    C[n:, n:] = cvv
    return C


@dataclass(frozen=True)
class JointFactorization:
    grid: TimeGrid
    kernel: Kernel
    L: np.ndarray = field(repr=False)
    jitter: float

    @property
    def n(self):
        return self.grid.n

    @property
    def increment_to_volterra(self):
        return self.L[self.n :, : self.n]

    @property
    def residual_factor(self):
        return self.L[self.n :, self.n :]


def factorize_joint(kernel, grid):
    """Block Cholesky factor of the joint covariance of ``(dW, V)``."""
    n = grid.n
    C = joint_covariance(kernel, grid)
    sq = np.sqrt(grid.dt)
    L21 = C[n:, :n] / sq[None, :]
    S = C[n:, n:] - L21 @ L21.T
    S = 0.5 * (S + S.T)
    reference = float(np.mean(np.diag(C)))
    L22, jitter = factor_psd(S, reference)
    L = np.zeros((2 * n, 2 * n))
    L[:n, :n] = np.diag(sq)
    L[n:, :n] = L21
    L[n:, n:] = L22
    return JointFactorization(grid, kernel, L, jitter)


def _check_rho(rho):
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")


def increments(grid, Z):
    """Brownian increments from the leading ``2n`` normals of each row."""
    n = grid.n
    sq = np.sqrt(grid.dt)
    return Z[:, :n] * sq, Z[:, n : 2 * n] * sq


def volterra_from_normals(fact, Z):
    """``V`` at grid times from normals laid out as ``[dW | dWhat | residual]``."""
    n = fact.n
    V = np.zeros((Z.shape[0], n + 1))
    V[:, 1:] = Z[:, :n] @ fact.increment_to_volterra.T + Z[:, 2 * n :] @ fact.residual_factor.T
    return V


def sample_exact(fact, rho, seed, n_paths=1, first=0):
    """Exact joint sample of ``(dW, dWhat, V)`` for replications ``first .. first + n_paths - 1``."""
    _check_rho(rho)
    n = fact.n
    Z = rng.normals(seed, first, n_paths, 3 * n)
    dW, dWhat = increments(fact.grid, Z)
    return PathBundle(fact.grid, dW, dWhat, volterra_from_normals(fact, Z), float(rho))


@dataclass(frozen=True)
class OUStepLaw:
    """Exact one-step law of the OU integrals ``int exp(-x_i (t_{k+1} - u)) dW_u`` given ``dW_k``."""

    decay: np.ndarray
    loading: np.ndarray
    factor: np.ndarray
    jitter: float


def ou_step_law(nodes, dt):
    """Conditional law of the per-node step integrals given the Brownian increment."""
    x = np.asarray(nodes, dtype=float)
    rate = x[:, None] + x[None, :]
    safe = np.where(rate > 0, rate, 1.0)
    cov = np.where(rate > 0, -np.expm1(-rate * dt) / safe, dt)
    xs = np.where(x > 0, x, 1.0)
    cross = np.where(x > 0, -np.expm1(-x * dt) / xs, dt)
    loading = cross / dt
    resid = cov - np.outer(cross, cross) / dt
    resid = 0.5 * (resid + resid.T)
    factor, jitter = factor_psd(resid, float(np.mean(np.diag(cov))))
    return OUStepLaw(np.exp(-x * dt), loading, factor, jitter)


def sample_markovian(kernel, grid, rho, seed, n_paths=1, first=0):
    """Sample ``V`` for a sum-of-exponentials kernel by exact OU recursion.

    Increments are drawn exactly as in :func:`sample_exact`, so both samplers
    share ``dW`` and ``dWhat`` for a given seed.
    """
    if kernel.family is not Family.SUM_OF_EXPONENTIALS:
        raise ValueError("Markovian sampler needs a sum-of-exponentials kernel")
    _check_rho(rho)
    n = grid.n
    m = len(kernel.nodes)
    Z = rng.normals(seed, first, n_paths, (2 + m) * n)
    dW, dWhat = increments(grid, Z)
    aux = Z[:, 2 * n :].reshape(n_paths, n, m)
    w = kernel.scale * np.asarray(kernel.weights)
    laws = {}
    Y = np.zeros((n_paths, m))
    V = np.zeros((n_paths, n + 1))
    for k, h in enumerate(grid.dt):
        law = laws.get(h)
        if law is None:
            law = laws[h] = ou_step_law(kernel.nodes, h)
        step = dW[:, k : k + 1] * law.loading + aux[:, k] @ law.factor.T
        Y = Y * law.decay + step
        V[:, k + 1] = Y @ w
    return PathBundle(grid, dW, dWhat, V, float(rho))
