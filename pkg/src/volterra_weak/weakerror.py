"""Weak errors from kernel approximation: Gaussian oracles, coupled Monte Carlo, rates.

For the Volterra process alone, ``V_T`` and ``Vbar_T`` are centred Gaussians
and the weak error has the exact expansion::

    E phi(Vbar_T) - E phi(V_T)
        = 1/2 int_0^T (Kbar(T-t)**2 - K(T-t)**2) E phi''(N(0, s_t**2)) dt,
    s_t**2 = int_0^t Kbar(T-u)**2 du + int_t^T K(T-u)**2 du,

which :func:`volterra_weak_error_exact` evaluates next to the direct
difference of the two Gaussian expectations.

For the integrated process, :func:`coupled_weak_error` drives ``X`` and
``Xbar`` with the same Brownian increments and the same residual normals.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import gamma as gamma_fn

from . import rng
from .expr import parse
from .kernels import bound_quantity
from .models import euler_evolve
from .quadrature import integrate
from .sampler import PathBundle, factorize_joint, increments, volterra_from_normals

@dataclass(frozen=True)
class TestFunction:
    """Test function ``phi`` with its second derivative.

    ``lipschitz`` is the Lipschitz constant when finite, else ``None``.
    """

    __test__ = False  # not a pytest class

    name: str
    f: Callable = field(repr=False, compare=False)
    d2: Callable = field(repr=False, compare=False)
    lipschitz: Optional[float] = None

    def __call__(self, x):
        return self.f(np.asarray(x, dtype=float))


def _neg_gauss_d2(x):
    return (4.0 * x**2 - 2.0) * np.exp(-(x**2))


BUILTIN = {
    "square": TestFunction("square", lambda x: x**2, lambda x: np.full_like(x, 2.0)),
    "cos": TestFunction("cos", np.cos, lambda x: -np.cos(x), lipschitz=1.0),
    "exp_neg": TestFunction(
        "exp_neg", lambda x: np.exp(-(x**2)), _neg_gauss_d2, lipschitz=math.sqrt(2.0 / math.e)
    ),
    "poly4": TestFunction("poly4", lambda x: x**4, lambda x: 12.0 * x**2),
}


def get_test_function(name):
    """Built-in test function by name, or a custom expression in ``x``."""
    if isinstance(name, TestFunction):
        return name
    if name in BUILTIN:
        return BUILTIN[name]
    e = parse(name, ("x",))
    d2 = e.diff("x").diff("x")
    return TestFunction(name, lambda x: e(x=x), lambda x: d2(x=x))


def _gh_rule(n):
    x, w = np.polynomial.hermite_e.hermegauss(n)
    return x, w / math.sqrt(2.0 * math.pi)


_GH_X, _GH_W = _gh_rule(64)
_GH_X2, _GH_W2 = _gh_rule(128)
_LEG_X, _LEG_W = np.polynomial.legendre.leggauss(8)
_Z_RANGE = 10.0
_MAX_PANELS = 8192


def _composite_expectation(phi, sd, atol, rtol):
    """``E phi(sd Z)`` by panelled Gauss-Legendre on ``|z| <= 10``, doubling panels."""
    previous = None
    panels = 32
    while panels <= _MAX_PANELS:
        edges = np.linspace(-_Z_RANGE, _Z_RANGE, panels + 1)
        half = 0.5 * (edges[1] - edges[0])
        z = ((edges[:-1] + edges[1:]) / 2)[:, None] + half * _LEG_X
        w = (half * _LEG_W * np.exp(-0.5 * z**2) / math.sqrt(2.0 * math.pi)).ravel()
        out = np.asarray(phi(sd * z.ravel()), dtype=float) @ w
        if previous is not None and np.all(np.abs(out - previous) <= atol + rtol * np.abs(out)):
            return out
        previous = out
        panels *= 2
    return out


def gaussian_expectation(phi, variance, atol=1e-14, rtol=1e-12):
    """``E phi(Z)`` for ``Z ~ N(0, variance)``.

    The base rule is 64-point Gauss-Hermite, exact for polynomials of degree
    up to 127.  It is checked against the 128-point rule; where the two
    disagree (``phi`` with features narrower than the Hermite node spacing,
    e.g. ``exp(-x**2)`` at large variance) the value is recomputed with a
    panelled Gauss-Legendre rule refined until it settles.

    ``phi`` is any vectorised callable; ``variance`` may be an array.
    """
    v = np.asarray(variance, dtype=float)
    if np.any(v < 0):
        raise ValueError("variance must be nonnegative")
    sd = np.sqrt(v)[..., None]
    out = np.asarray(phi(sd * _GH_X), dtype=float) @ _GH_W
    check = np.asarray(phi(sd * _GH_X2), dtype=float) @ _GH_W2
    off = np.abs(out - check) > atol + rtol * np.abs(check)
    if np.any(off):
        out = np.array(out, dtype=float)
        out[off] = _composite_expectation(phi, sd[off], atol, rtol)
    return float(out) if out.ndim == 0 else out


def gaussian_moment(order, variance):
    """``E Z**order`` for ``Z ~ N(0, variance)`` and even ``order = 2k``: ``variance**k (2k-1)!!``."""
    if int(order) != order or order < 0 or order % 2:
        raise ValueError(f"order must be a nonnegative even integer, got {order}")
    if variance < 0:
        raise ValueError("variance must be nonnegative")
    k = int(order) // 2
    return math.prod(range(1, 2 * k, 2)) * variance**k


def gaussian_moment_gamma(order, variance):
    """Same moment through ``2**k Gamma(k + 1/2) / sqrt(pi)``."""
    k = order // 2
    return variance**k * 2.0**k * gamma_fn(k + 0.5) / math.sqrt(math.pi)


def gaussian_w1(sigma, sigma_bar):
    """Wasserstein-1 distance between ``N(0, sigma**2)`` and ``N(0, sigma_bar**2)``.

    The monotone coupling ``(sigma Z, sigma_bar Z)`` is optimal in one
    dimension, so the distance is ``|sigma - sigma_bar| E|Z| = sqrt(2/pi) |sigma - sigma_bar|``.
    """
    if sigma < 0 or sigma_bar < 0:
        raise ValueError("standard deviations must be nonnegative")
    return math.sqrt(2.0 / math.pi) * abs(sigma - sigma_bar)


@dataclass(frozen=True)
class VolterraWeakError:
    """``E phi(Vbar_T) - E phi(V_T)`` by the expansion and by direct difference."""

    expansion: float
    direct: float

    @property
    def discrepancy(self):
        return abs(self.expansion - self.direct)


def volterra_weak_error_exact(phi, K, Kbar, T, atol=1e-12, rtol=1e-12):
    phi = get_test_function(phi)
    norm = float(K.l2_norm_sq(T))
    norm_bar = float(Kbar.l2_norm_sq(T))
    direct = gaussian_expectation(phi, norm_bar) - gaussian_expectation(phi, norm)
    if K == Kbar:
        return VolterraWeakError(0.0, 0.0)

    # r = T - t; s_t**2 = |Kbar|^2_T - |Kbar|^2_r + |K|^2_r
    def integrand(r):
        var = norm_bar - Kbar.l2_norm_sq(r) + K.l2_norm_sq(r)
        return 0.5 * (Kbar(r) ** 2 - K(r) ** 2) * gaussian_expectation(phi.d2, var)

    expansion = integrate(
        integrand,
        0.0,
        T,
        alpha=2.0 * min(K.singular_exponent, Kbar.singular_exponent),
        breakpoints=tuple(sorted(set(K.breakpoints) | set(Kbar.breakpoints))),
        atol=atol,
        rtol=rtol,
        max_evals=2**22,
    )
    return VolterraWeakError(float(expansion), float(direct))


volterra_weak_error_exact.__doc__ = """Exact weak error of the Volterra marginal at ``T``.

    Returns both the error-expansion route (outer graded quadrature with an
    inner Gauss-Hermite expectation of ``phi''``) and the direct difference
    of Gaussian expectations.  Sign convention: ``E phi(Vbar_T) - E phi(V_T)``.
    """


@dataclass(frozen=True)
class WeakErrorReport:
    estimate: float
    ci_half_width: float
    bound_quantity: float
    n_replications: int
    seed: int
    rejection_count: int
    bound_l1: float = float("nan")
    bound_l1sq: float = float("nan")
    config_echo: dict = field(default_factory=dict)

    def to_json(self):
        payload = {
            "estimate": self.estimate,
            "ci": self.ci_half_width,
            "bound_quantity": self.bound_quantity,
            "bound_l1": self.bound_l1,
            "bound_l1sq": self.bound_l1sq,
            "n": self.n_replications,
            "seed": self.seed,
            "rejections": self.rejection_count,
            "config_echo": self.config_echo,
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def _batch_differences(model, fact, fact_bar, phi, seed, first, count, independent):
    n = fact.n
    Z = rng.normals(seed, first, count, 3 * n)
    dW, dWhat = increments(fact.grid, Z)
    V = volterra_from_normals(fact, Z)
    if fact_bar is fact:
        Vb = V
        dWb, dWhatb = dW, dWhat
    elif independent:
        Zb = rng.normals(seed, first, count, 3 * n, tag=1)
        dWb, dWhatb = increments(fact.grid, Zb)
        Vb = volterra_from_normals(fact_bar, Zb)
    else:
        Vb = volterra_from_normals(fact_bar, Z)
        dWb, dWhatb = dW, dWhat
    res = euler_evolve(model, PathBundle(fact.grid, dW, dWhat, V, model.rho))
    res_bar = euler_evolve(model, PathBundle(fact.grid, dWb, dWhatb, Vb, model.rho))
    diff = phi(res.terminal) - phi(res_bar.terminal)
    bad = res.rejected | res_bar.rejected | ~np.isfinite(diff)
    return diff, bad


def coupled_differences(
    model, K, Kbar, grid, phi, N, seed, batch_size=4096, threads=1, independent=False
):
    """Per-replication ``phi(X_T) - phi(Xbar_T)`` and rejection mask, in replication order.

    Batches are fixed by ``batch_size`` alone, so the result does not depend
    on ``threads``.  ``independent=True`` drives ``Xbar`` with separate
    streams (no coupling) for variance comparisons.
    """
    phi = get_test_function(phi)
    fact = factorize_joint(K, grid)
    fact_bar = fact if (Kbar == K and not independent) else factorize_joint(Kbar, grid)
    starts = range(0, N, batch_size)

    def run(first):
        count = min(batch_size, N - first)
        return _batch_differences(model, fact, fact_bar, phi, seed, first, count, independent)

    if threads <= 1:
        parts = [run(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, starts))
    diff = np.concatenate([p[0] for p in parts])
    bad = np.concatenate([p[1] for p in parts])
    return diff, bad


def coupled_weak_error(
    model,
    K,
    Kbar,
    grid,
    phi,
    N,
    seed,
    batch_size=4096,
    threads=1,
    config_echo=None,
):
    """Coupled Monte Carlo estimate of ``E phi(X_T) - E phi(Xbar_T)``.

    Both processes share ``dW``, ``dWhat`` and the residual normals of every
    replication, so identical kernels give identical paths and an exactly
    zero estimate.
    """
    if N < 2:
        raise ValueError("need at least two replications")
    diff, bad = coupled_differences(model, K, Kbar, grid, phi, N, seed, batch_size, threads)
    good = diff[~bad]
    if good.size < 2:
        raise ArithmeticError("fewer than two replications survived")
    estimate = float(np.mean(good))
    ci = float(1.96 * np.std(good, ddof=1) / math.sqrt(good.size))
    profile = bound_quantity(K, Kbar, grid.T)
    return WeakErrorReport(
        estimate=estimate,
        ci_half_width=ci,
        bound_quantity=profile.bound_quantity,
        n_replications=int(N),
        seed=int(seed),
        rejection_count=int(np.count_nonzero(bad)),
        bound_l1=profile.bound_l1,
        bound_l1sq=profile.bound_l1sq,
        config_echo=dict(config_echo or {}),
    )


def dissipation_second_moment(model, kernel, grid):
    """Exact ``E[X_T**2]`` of the Euler-discretised dissipation model under ``kernel``.

    With ``X_T = X_0 + sum_k eps_k dt_k`` and ``eps_k`` lognormal, every
    cross moment ``E[eps_j eps_k]`` is explicit in the Volterra covariance.
    """
    from .kernels import covariance

    t = grid.t[:-1]
    C = covariance(kernel, t[:, None], t[None, :])
    var = model.variance(t)
    nu2 = model.nu**2
    d = np.diag(C)
    mean = np.exp(0.5 * nu2 * (d - var))
    cross = np.exp(0.5 * nu2 * (d[:, None] + d[None, :] + 2.0 * C) - 0.5 * nu2 * (var[:, None] + var[None, :]))
    h = grid.dt
    x0 = model.X0
    return float(x0**2 + 2.0 * x0 * (h @ mean) + h @ cross @ h)


class RateFitError(ValueError):
    pass


@dataclass(frozen=True)
class RateFit:
    points: tuple
    slope: float
    intercept: float
    r_squared: float
    excluded: int

    def to_dict(self):
        d = asdict(self)
        d["points"] = [list(p) for p in self.points]
        return d


def rate_study(points, noise_factor=3.0):
    """Least-squares slope of ``log|error|`` against ``log(parameter)``.

    ``points`` holds ``(parameter, magnitude)`` or ``(parameter, magnitude, ci)``
    tuples.  Points with ``|magnitude| < noise_factor * ci`` or a zero
    magnitude are excluded and counted.
    """
    usable, excluded = [], 0
    for p in points:
        param, mag = float(p[0]), abs(float(p[1]))
        ci = float(p[2]) if len(p) > 2 else 0.0
        if mag == 0.0 or not np.isfinite(mag) or mag < noise_factor * ci or param <= 0:
            excluded += 1
        else:
            usable.append((param, mag))
    if len(usable) < 3:
        raise RateFitError(f"need at least 3 usable points, got {len(usable)}")
    x = np.log([u[0] for u in usable])
    y = np.log([u[1] for u in usable])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(tuple(tuple(map(float, p)) for p in points), float(slope), float(intercept), r2, excluded)
