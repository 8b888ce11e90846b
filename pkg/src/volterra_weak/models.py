"""Coefficient pairs ``(b, sigma)`` and the Euler scheme for the integrated process.

The integrated process is::

    X_t = X_0 + int_0^t b(s, V_s) ds + int_0^t sigma(s, V_s) dB_s,
    B = rho W + sqrt(1 - rho**2) What.

Built-in variants:

``rough_bergomi``
    ``b(t, v) = -exp(nu v - nu**2/2 var(t)) / 2`` and
    ``sigma(t, v) = exp(nu v / 2 - nu**2/4 var(t))``.
``dissipation``
    ``X_t = int_0^t eps_s ds`` with ``eps_t = exp(nu v - nu**2/2 var(t))``.

In both, ``var(t) = c**2 t**(2H) / (2H)`` is the variance of the Volterra
process driven by the reference kernel ``c t**(H - 1/2)``, evaluated at the
running time of the integrand.  With the usual rough Bergomi choice
``c = sqrt(2H)`` this is ``t**(2H)``; the exponentials are then mean-one
under the reference kernel.  The same ``var`` is used when the coefficients
are fed an approximate Volterra process, so the correction is a property
of the model, not of the kernel being simulated.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .expr import parse
from .kernels import Family, Kernel, domination_constant


class Variant(str, enum.Enum):
    ROUGH_BERGOMI = "rough_bergomi"
    DISSIPATION = "dissipation"
    CUSTOM = "custom"


@dataclass(frozen=True)
class ModelSpec:
    """Coefficients, correlation and initial value of the integrated process.

    ``b`` and ``sigma`` take ``(t, v)`` arrays and return arrays.  For the
    built-ins ``nu``, ``H`` and ``scale`` record the parameters; for custom
    models ``b_text`` and ``sigma_text`` keep the source expressions.
    """

    b: Callable = field(repr=False, compare=False)
    sigma: Callable = field(repr=False, compare=False)
    rho: float = 0.0
    X0: float = 0.0
    variant: Variant = Variant.CUSTOM
    nu: Optional[float] = None
    H: Optional[float] = None
    scale: Optional[float] = None
    b_text: Optional[str] = None
    sigma_text: Optional[str] = None

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")

    @property
    def pure_drift(self):
        return self.variant is Variant.DISSIPATION

    def variance(self, t):
        """Normaliser ``c**2 t**(2H) / (2H)`` of the built-in variants."""
        if self.H is None:
            raise ValueError("custom models have no variance normaliser")
        t = np.asarray(t, dtype=float)
        return self.scale**2 * t ** (2.0 * self.H) / (2.0 * self.H)

    def reference_kernel(self):
        """Fractional kernel whose Volterra variance matches :meth:`variance`."""
        if self.H is None:
            raise ValueError("custom models have no reference kernel")
        return Kernel.fractional(self.H, scale=self.scale)


def rough_bergomi(nu, H, rho=0.0, X0=0.0, scale=None):
    """Rough Bergomi log-price; ``scale`` defaults to ``sqrt(2H)``."""
    if nu <= 0:
        raise ValueError("nu must be positive")
    c = float(np.sqrt(2.0 * H)) if scale is None else float(scale)
    var = lambda t: c**2 * np.asarray(t, dtype=float) ** (2.0 * H) / (2.0 * H)  # noqa: E731

    def b(t, v):
        return -0.5 * np.exp(nu * v - 0.5 * nu**2 * var(t))

    def sigma(t, v):
        return np.exp(0.5 * nu * v - 0.25 * nu**2 * var(t))

    return ModelSpec(b, sigma, float(rho), float(X0), Variant.ROUGH_BERGOMI, float(nu), float(H), c)


def dissipation(nu, H, X0=0.0, scale=1.0):
    """Integrated turbulence dissipation ``X_t = int_0^t eps_s ds``."""
    if nu <= 0:
        raise ValueError("nu must be positive")
    c = float(scale)

    def eps(t, v):
        var = c**2 * np.asarray(t, dtype=float) ** (2.0 * H) / (2.0 * H)
        return np.exp(nu * v - 0.5 * nu**2 * var)

    def zero(t, v):
        return np.zeros(np.broadcast(t, v).shape)

    return ModelSpec(eps, zero, 0.0, float(X0), Variant.DISSIPATION, float(nu), float(H), c)


def custom(b, sigma, rho=0.0, X0=0.0):
    """Model from expression strings in the variables ``t`` and ``v``."""
    be = parse(b, ("t", "v"))
    se = parse(sigma, ("t", "v"))
    return ModelSpec(
        lambda t, v: be(t=t, v=v),
        lambda t, v: se(t=t, v=v),
        float(rho),
        float(X0),
        Variant.CUSTOM,
        b_text=b,
        sigma_text=sigma,
    )


@dataclass(frozen=True)
class EulerResult:
    terminal: np.ndarray
    rejected: np.ndarray
    path: Optional[np.ndarray] = None

    @property
    def rejection_count(self):
        return int(np.count_nonzero(self.rejected))


def euler_evolve(model, bundle, return_path=False):
    """Left-point Euler scheme for ``X`` along every replication of ``bundle``.

    Replications where a coefficient evaluates to a non-finite number are
    marked in ``rejected`` and their terminal value is NaN.
    """
    grid = bundle.grid
    R = bundle.V.shape[0]
    X = np.full(R, float(model.X0))
    path = np.empty((R, grid.n + 1)) if return_path else None
    if return_path:
        path[:, 0] = X
    bad = np.zeros(R, dtype=bool)
    dB = None if model.pure_drift else bundle.dB
    for k, (t, h) in enumerate(zip(grid.t[:-1], grid.dt)):
        v = bundle.V[:, k]
        step = model.b(t, v) * h
        if dB is not None:
            step = step + model.sigma(t, v) * dB[:, k]
        bad |= ~np.isfinite(step)
        X = X + step
        if return_path:
            path[:, k + 1] = X
    X = np.where(bad, np.nan, X)
    return EulerResult(X, bad, path)


@dataclass
class ValidityReport:
    passed: bool = True
    violations: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    domination_constant: Optional[float] = None

    def fail(self, reason):
        self.passed = False
        self.violations.append(reason)


def _check_H(report, H, who):
    if H is None:
        return
    if H == 0.5:
        report.warnings.append(f"{who}: H = 1/2 (constant kernel) is outside (0,1/2)")
    elif not 0.0 < H < 0.5:
        report.fail(f"{who}: H outside (0,1/2)")


def validate_hypotheses(model, kernel, kernel_bar=None, T=1.0, n_points=1000):
    """Check the kernel and coefficient hypotheses the weak-error bound relies on.

    Never raises; violations are listed in the returned report.
    """
    report = ValidityReport()
    if model is not None:
        _check_H(report, model.H, "model")
    if kernel.family is not Family.SUM_OF_EXPONENTIALS:
        _check_H(report, kernel.H, "kernel")
    grid = T * np.logspace(-6.0, 0.0, n_points)
    values = kernel(grid)
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        report.fail("kernel: negative or non-finite values on (0,T]")
    if np.any(np.diff(values) > 1e-12 * np.abs(values[1:])):
        report.fail("kernel: not non-increasing on (0,T]")
    if kernel_bar is not None:
        vb = kernel_bar(grid)
        if np.any(vb < 0) or not np.all(np.isfinite(vb)):
            report.fail("kernel_bar: negative or non-finite values on (0,T]")
        c = domination_constant(kernel, kernel_bar, T)
        report.domination_constant = c
        if not np.isfinite(c):
            report.fail("kernel_bar is not dominated by a multiple of kernel")
    if model is None:
        pass
    elif model.variant is Variant.CUSTOM:
        report.notes.append("coefficients unchecked (custom model)")
    elif model.variant is Variant.ROUGH_BERGOMI:
        report.notes.append(f"exponential growth envelope: nu_b = {model.nu}, nu_sigma = {model.nu / 2}")
    else:
        report.notes.append(f"exponential growth envelope: nu_b = {model.nu}, sigma = 0")
    return report
