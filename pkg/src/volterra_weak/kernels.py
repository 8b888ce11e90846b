"""Fractional kernels, their approximations, and kernel-distance functionals.

Four kernel families are supported::

    fractional            K(t) = c * t**(H - 1/2)
    smoothed              K(t) = c * (t + tau)**(H - 1/2)
    truncated             K(t) = c * max(t, tau)**(H - 1/2)
    sum_of_exponentials   K(t) = c * sum_i w_i * exp(-x_i * t)

where ``c`` is the ``scale`` field.  Every family has closed forms for the
antiderivative, the squared L2 norm and the covariance of the associated
Volterra process ``V_t = int_0^t K(t - u) dW_u``; distances between two
kernels go through the graded quadrature in :mod:`volterra_weak.quadrature`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import hyp2f1

from .quadrature import QuadratureError, integrate

__all__ = [
    "Family",
    "Kernel",
    "KernelDistanceProfile",
    "QuadratureError",
    "evaluate",
    "l2_norm_sq",
    "l1_diff",
    "l1_sqdiff",
    "bound_quantity",
    "covariance",
    "domination_constant",
]


class Family(str, enum.Enum):
    FRACTIONAL = "fractional"
    SMOOTHED = "smoothed"
    TRUNCATED = "truncated"
    SUM_OF_EXPONENTIALS = "sum_of_exponentials"


_POWER_FAMILIES = (Family.FRACTIONAL, Family.SMOOTHED, Family.TRUNCATED)


@dataclass(frozen=True)
class Kernel:
    """Immutable description of a kernel ``K : (0, T] -> [0, inf)``.

    Use the classmethod constructors rather than the raw initialiser.
    ``H`` is accepted on ``(0, 1)`` so that invalid models can still be
    built and then reported by :func:`volterra_weak.models.validate_hypotheses`;
    the theory needs ``H < 1/2`` and ``H = 1/2`` is the constant kernel.
    """

    family: Family
    H: float | None = None
    tau: float | None = None
    scale: float = 1.0
    nodes: tuple[float, ...] = ()
    weights: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "nodes", tuple(float(x) for x in self.nodes))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if not np.isfinite(self.scale) or self.scale < 0:
            raise ValueError(f"scale must be finite and nonnegative, got {self.scale}")
        if self.family in _POWER_FAMILIES:
            if self.H is None or not 0.0 < self.H < 1.0:
                raise ValueError(f"H must lie in (0, 1), got {self.H}")
            if self.nodes or self.weights:
                raise ValueError(f"{self.family.value} kernel takes no nodes/weights")
        if self.family in (Family.SMOOTHED, Family.TRUNCATED):
            if self.tau is None or not self.tau > 0:
                raise ValueError(f"tau must be positive, got {self.tau}")
        elif self.tau is not None:
            raise ValueError(f"{self.family.value} kernel takes no tau")
        if self.family is Family.SUM_OF_EXPONENTIALS:
            if not self.nodes:
                raise ValueError("sum-of-exponentials kernel needs at least one node")
            if len(self.nodes) != len(self.weights):
                raise ValueError("nodes and weights must have equal lengths")
            x = np.asarray(self.nodes)
            if np.any(x < 0) or np.any(np.diff(x) <= 0) or not np.all(np.isfinite(x)):
                raise ValueError("nodes must be finite, nonnegative and strictly increasing")
            w = np.asarray(self.weights)
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValueError("weights must be finite and nonnegative")

    # -- constructors -----------------------------------------------------

    @classmethod
    def fractional(cls, H, scale=1.0):
        return cls(Family.FRACTIONAL, H=H, scale=scale)

    @classmethod
    def smoothed(cls, H, tau, scale=1.0):
        return cls(Family.SMOOTHED, H=H, tau=tau, scale=scale)

    @classmethod
    def truncated(cls, H, tau, scale=1.0):
        return cls(Family.TRUNCATED, H=H, tau=tau, scale=scale)

    @classmethod
    def sum_of_exponentials(cls, nodes, weights, scale=1.0):
        return cls(
            Family.SUM_OF_EXPONENTIALS,
            nodes=tuple(nodes),
            weights=tuple(weights),
            scale=scale,
        )

    # -- properties -------------------------------------------------------

    @property
    def exponent(self):
        """Power ``H - 1/2`` of the power-law families (0 for sums of exponentials)."""
        return self.H - 0.5 if self.family in _POWER_FAMILIES else 0.0

    @property
    def singular_exponent(self):
        """Exponent of the singularity at the origin (0 when the kernel is bounded)."""
        if self.family is Family.FRACTIONAL:
            return min(self.exponent, 0.0)
        return 0.0

    @property
    def breakpoints(self):
        return (self.tau,) if self.family is Family.TRUNCATED else ()

    def _arrays(self):
        return np.asarray(self.nodes), np.asarray(self.weights)

    # -- evaluation -------------------------------------------------------

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(np.isnan(t)):
            raise ValueError("kernel evaluated at negative time")
        a = self.exponent
        if self.family is Family.FRACTIONAL:
            if np.any(t == 0):
                raise ValueError("fractional kernel is singular at t = 0")
            out = t**a
        elif self.family is Family.SMOOTHED:
            out = (t + self.tau) ** a
        elif self.family is Family.TRUNCATED:
            out = np.maximum(t, self.tau) ** a
        else:
            x, w = self._arrays()
            out = np.exp(-np.multiply.outer(t, x)) @ w
        return self.scale * out

    def integral(self, t):
        """Antiderivative ``int_0^t K(s) ds`` (vectorised, ``t >= 0``)."""
        t = np.asarray(t, dtype=float)
        a1 = self.exponent + 1.0
        if self.family is Family.FRACTIONAL:
            out = t**a1 / a1
        elif self.family is Family.SMOOTHED:
            out = ((t + self.tau) ** a1 - self.tau**a1) / a1
        elif self.family is Family.TRUNCATED:
            tau = self.tau
            tail = (np.maximum(t, tau) ** a1 - tau**a1) / a1
            out = tau ** (a1 - 1.0) * np.minimum(t, tau) + tail
        else:
            x, w = self._arrays()
            tx = np.multiply.outer(t, x)
            safe = np.where(x > 0, x, 1.0)
            per_node = np.where(x > 0, -np.expm1(-tx) / safe, np.broadcast_to(t[..., None], tx.shape))
            out = per_node @ w
        return self.scale * out

    def l2_norm_sq(self, T):
        """Closed-form ``int_0^T K(s)**2 ds`` (vectorised, ``T >= 0``)."""
        T = np.asarray(T, dtype=float)
        if np.any(T < 0):
            raise ValueError("horizon must be nonnegative")
        c2 = self.scale**2
        two_h = 2.0 * self.exponent + 1.0
        if self.family is Family.FRACTIONAL:
            return c2 * T**two_h / two_h
        if self.family is Family.SMOOTHED:
            return c2 * ((T + self.tau) ** two_h - self.tau**two_h) / two_h
        if self.family is Family.TRUNCATED:
            tau = self.tau
            head = tau ** (two_h - 1.0) * np.minimum(T, tau)
            return c2 * (head + (np.maximum(T, tau) ** two_h - tau**two_h) / two_h)
        x, w = self._arrays()
        rate = x[:, None] + x[None, :]
        ww = np.outer(w, w)
        Tb = T[..., None, None]
        safe = np.where(rate > 0, rate, 1.0)
        term = np.where(rate > 0, -np.expm1(-rate * Tb) / safe, Tb)
        return c2 * np.sum(ww * term, axis=(-2, -1))

    # -- config block -----------------------------------------------------

    def to_config(self):
        """Flat ``key -> text`` mapping; floats use round-trip ``repr``."""
        out = {"family": self.family.value, "scale": repr(float(self.scale))}
        if self.H is not None:
            out["H"] = repr(float(self.H))
        if self.tau is not None:
            out["tau"] = repr(float(self.tau))
        if self.family is Family.SUM_OF_EXPONENTIALS:
            out["nodes"] = ",".join(repr(x) for x in self.nodes)
            out["weights"] = ",".join(repr(w) for w in self.weights)
        return out

    @classmethod
    def from_config(cls, block):
        """Inverse of :meth:`to_config`.  Unknown keys raise ``KeyError``."""
        allowed = {"family", "H", "tau", "scale", "nodes", "weights"}
        unknown = set(block) - allowed
        if unknown:
            raise KeyError(f"unknown kernel key(s): {', '.join(sorted(unknown))}")
        if "family" not in block:
            raise KeyError("kernel block needs a 'family' key")
        kwargs = {"family": Family(block["family"].strip())}
        for key in ("H", "tau", "scale"):
            if key in block:
                kwargs[key] = float(block[key])
        for key in ("nodes", "weights"):
            if key in block:
                kwargs[key] = tuple(float(v) for v in block[key].split(",") if v.strip())
        return cls(**kwargs)


def evaluate(kernel, t):
    """Evaluate ``kernel`` at ``t`` (scalar or array)."""
    out = kernel(t)
    return float(out) if np.ndim(out) == 0 else out


def l2_norm_sq(kernel, T, method="closed"):
    """Squared L2 norm on ``[0, T]``.

    ``method="quad"`` integrates ``K**2`` numerically instead of using the
    closed form; it exists to cross-check the closed forms.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    if method == "closed":
        return float(kernel.l2_norm_sq(T))
    if method != "quad":
        raise ValueError(f"unknown method {method!r}")
    return integrate(
        lambda s: kernel(s) ** 2,
        0.0,
        T,
        alpha=2.0 * kernel.singular_exponent,
        breakpoints=kernel.breakpoints,
    )


def _truncated_pair(K, Kbar):
    """Return ``(fractional, truncated)`` if the pair differs only by truncation."""
    for frac, trunc in ((K, Kbar), (Kbar, K)):
        if (
            frac.family is Family.FRACTIONAL
            and trunc.family is Family.TRUNCATED
            and frac.H == trunc.H
            and frac.scale == trunc.scale
        ):
            return frac, trunc
    return None


def _diff_integral(K, Kbar, t, power, weight=None, **quad_kw):
    singular = min(K.singular_exponent, Kbar.singular_exponent) * power
    breaks = tuple(sorted(set(K.breakpoints) | set(Kbar.breakpoints)))

    def integrand(s):
        g = np.abs(K(s) ** power - Kbar(s) ** power)
        return g if weight is None else weight(s) * g

    return integrate(integrand, 0.0, t, alpha=singular, breakpoints=breaks, **quad_kw)


def l1_diff(K, Kbar, t, **quad_kw):
    """``int_0^t |K - Kbar| ds``.

    The fractional/truncated pair uses its closed form; other pairs use
    graded quadrature split at every kernel breakpoint.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0 or K == Kbar:
        return 0.0
    pair = _truncated_pair(K, Kbar)
    if pair is not None:
        frac, trunc = pair
        a, tau, m = frac.exponent, trunc.tau, min(t, trunc.tau)
        return abs(frac.scale * (m ** (a + 1.0) / (a + 1.0) - tau**a * m))
    return _diff_integral(K, Kbar, t, 1, **quad_kw)


def l1_sqdiff(K, Kbar, t, **quad_kw):
    """``int_0^t |K**2 - Kbar**2| ds``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0 or K == Kbar:
        return 0.0
    pair = _truncated_pair(K, Kbar)
    if pair is not None:
        frac, trunc = pair
        two_h, tau, m = 2.0 * frac.exponent + 1.0, trunc.tau, min(t, trunc.tau)
        return abs(frac.scale**2 * (m**two_h / two_h - tau ** (two_h - 1.0) * m))
    return _diff_integral(K, Kbar, t, 2, **quad_kw)


def domination_constant(K, Kbar, T, n_points=4096):
    """Largest ratio ``Kbar / K`` on a log grid over ``[1e-12 T, T]``."""
    r = T * np.logspace(-12.0, 0.0, n_points)
    k, kb = K(r), Kbar(r)
    if np.any((k == 0) & (kb > 0)):
        return float("inf")
    pos = k > 0
    return float(np.max(kb[pos] / k[pos])) if np.any(pos) else 0.0


@dataclass(frozen=True)
class KernelDistanceProfile:
    """Kernel-only factor of the weak-error bound for one pair on ``[0, T]``.

    ``bound_quantity`` equals ``int_0^T {l1_diff_of(t) + l1_sqdiff_of(t)} dt``;
    ``bound_l1`` and ``bound_l1sq`` are its two components.
    """

    T: float
    l1_diff_of: Callable[[float], float] = field(repr=False, compare=False)
    l1_sqdiff_of: Callable[[float], float] = field(repr=False, compare=False)
    bound_l1: float
    bound_l1sq: float
    domination_constant: float

    @property
    def bound_quantity(self):
        return self.bound_l1 + self.bound_l1sq


def bound_quantity(K, Kbar, T, **quad_kw):
    """Compute the :class:`KernelDistanceProfile` of ``(K, Kbar)`` on ``[0, T]``.

    The outer time integral is folded into the inner one,
    ``int_0^T int_0^t g(s) ds dt = int_0^T (T - s) g(s) ds``, which keeps a
    single graded quadrature per component.
    """
    if T <= 0:
        raise ValueError("T must be positive")

    def l1_of(t):
        return l1_diff(K, Kbar, t, **quad_kw)

    def l1sq_of(t):
        return l1_sqdiff(K, Kbar, t, **quad_kw)

    if K == Kbar:
        b1 = b2 = 0.0
    else:
        lever = lambda s: T - s  # noqa: E731
        b1 = _diff_integral(K, Kbar, T, 1, weight=lever, **quad_kw)
        b2 = _diff_integral(K, Kbar, T, 2, weight=lever, **quad_kw)
    return KernelDistanceProfile(
        T=float(T),
        l1_diff_of=l1_of,
        l1_sqdiff_of=l1sq_of,
        bound_l1=float(b1),
        bound_l1sq=float(b2),
        domination_constant=domination_constant(K, Kbar, T),
    )


def _power_cross(a, d, x):
    """``int_0^x (w + d)**a * w**a dw`` for ``d, x >= 0`` (vectorised)."""
    d, x = np.broadcast_arrays(np.asarray(d, dtype=float), np.asarray(x, dtype=float))
    out = np.zeros(x.shape)
    two_h = 2.0 * a + 1.0
    diag = (d == 0) & (x > 0)
    out[diag] = x[diag] ** two_h / two_h
    off = (d > 0) & (x > 0)
    xo, do = x[off], d[off]
    z = xo / (xo + do)
    out[off] = xo ** (a + 1.0) * (xo + do) ** a * hyp2f1(1.0, -a, a + 2.0, z) / (a + 1.0)
    return out


def covariance(kernel, s, t):
    """``Cov(V_s, V_t) = int_0^{min(s,t)} K(s - u) K(t - u) du`` (vectorised).

    With ``m = min(s, t)`` and ``d = |s - t|`` the integral is
    ``int_0^m K(v + d) K(v) dv``; every family reduces to closed forms built
    from the Gauss hypergeometric function or exponential sums.
    """
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0) or np.any(t < 0):
        raise ValueError("covariance needs nonnegative times")
    m = np.minimum(s, t)
    d = np.abs(s - t)
    c2 = kernel.scale**2
    a = kernel.exponent
    fam = kernel.family
    if fam is Family.FRACTIONAL:
        out = _power_cross(a, d, m)
    elif fam is Family.SMOOTHED:
        tau = kernel.tau
        out = _power_cross(a, d, m + tau) - _power_cross(a, d, np.full_like(m, tau))
        out = np.where(m > 0, out, 0.0)
    elif fam is Family.TRUNCATED:
        tau = kernel.tau
        lo = np.clip(tau - d, 0.0, m)
        hi = np.clip(tau, 0.0, m)
        flat = tau ** (2.0 * a) * lo
        ramp = tau**a * ((hi + d) ** (a + 1.0) - (lo + d) ** (a + 1.0)) / (a + 1.0)
        tail = np.where(
            m > tau,
            _power_cross(a, d, np.maximum(m, tau)) - _power_cross(a, d, np.full_like(m, tau)),
            0.0,
        )
        out = flat + ramp + tail
    else:
        x, w = kernel._arrays()
        out = np.zeros(np.broadcast(m, d).shape)
        for xi, wi in zip(x, w):
            for xj, wj in zip(x, w):
                rate = xi + xj
                span = -np.expm1(-rate * m) / rate if rate > 0 else m
                out = out + wi * wj * np.exp(-xi * d) * span
    out = c2 * out
    return float(out) if out.ndim == 0 else out


def covariance_quad(kernel, s, t, **quad_kw):
    """Quadrature route for :func:`covariance` (scalar ``s``, ``t``)."""
    m, d = min(s, t), abs(s - t)
    if m == 0:
        return 0.0
    alpha = kernel.singular_exponent * (2.0 if d == 0 else 1.0)
    breaks = [p for p in (kernel.tau, (kernel.tau or 0.0) - d) if p and 0 < p < m]
    if kernel.family is not Family.TRUNCATED:
        breaks = []
    return integrate(
        lambda v: kernel(v + d) * kernel(v),
        0.0,
        m,
        alpha=alpha,
        breakpoints=breaks,
        **quad_kw,
    )
