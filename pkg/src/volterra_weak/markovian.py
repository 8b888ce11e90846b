"""Sum-of-exponentials approximations of the fractional kernel.

The fractional kernel is completely monotone::

    t**(H - 1/2) = int_0^inf exp(-t x) lam(x) dx,
    lam(x) = x**(-H - 1/2) / Gamma(1/2 - H).

A quadrature rule ``(x_i, w_i)`` for the measure ``lam(x) dx`` turns this
into ``Kbar(t) = sum_i w_i exp(-x_i t)``.  Rules here are Gaussian on each of
``m`` geometric cells between two cuts; mass outside the cuts is dropped.
Because ``exp(-t x)`` has nonnegative even derivatives in ``x``, every
Gaussian cell underestimates its share, so ``Kbar <= K`` pointwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import gammainc, gammaincc

from .kernels import Kernel


class RuleConditioningError(ArithmeticError):
    """The moment matrix of a quadrature cell is numerically singular."""


@dataclass(frozen=True)
class RuleDesign:
    cut_low: float
    cut_high: float
    cells: int
    points_per_cell: int
    lump_tail: bool = False


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes ``x_i`` (1/time, increasing) and weights ``w_i >= 0``."""

    nodes: tuple[float, ...]
    weights: tuple[float, ...]
    target_H: Optional[float] = None
    design: Optional[RuleDesign] = None
    tolerance: float = float("nan")

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(float(x) for x in self.nodes))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.nodes) != len(self.weights):
            raise ValueError("nodes and weights must have equal lengths")

    def __len__(self):
        return len(self.nodes)

    def __call__(self, t):
        """Reconstructed kernel ``sum_i w_i exp(-x_i t)``."""
        t = np.asarray(t, dtype=float)
        return np.exp(-np.multiply.outer(t, np.asarray(self.nodes))) @ np.asarray(self.weights)

    def reconstruction_error(self, T, n_points=512):
        """Max gap to the exact Laplace integral restricted to the cuts.

        Measured on a log grid over ``[1e-3 T, T]``; this is the error of
        the cellwise Gaussian rules alone, separate from the dropped tails.
        """
        if self.design is None or self.target_H is None:
            raise ValueError("rule has no design to compare against")
        t = T * np.logspace(-3.0, 0.0, n_points)
        exact = truncated_laplace(self.target_H, t, self.design.cut_low, self.design.cut_high)
        approx = self(t)
        if self.design.lump_tail:
            approx = approx - self.weights[0] * np.exp(-self.nodes[0] * t)
        return float(np.max(np.abs(approx - exact)))


def laplace_density(H, x):
    """``lam(x) = x**(-H - 1/2) / Gamma(1/2 - H)``, the Laplace density of ``t**(H - 1/2)``."""
    if not 0.0 < H < 0.5:
        raise ValueError(f"H must lie in (0, 1/2), got {H}")
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("Laplace density is defined for x > 0 only")
    out = x ** (-H - 0.5) / gamma_fn(0.5 - H)
    return float(out) if out.ndim == 0 else out


def truncated_laplace(H, t, lo, hi):
    """``int_lo^hi exp(-t x) lam(x) dx`` in closed form.

    Equals ``t**(H - 1/2) * (P(1/2 - H, t hi) - P(1/2 - H, t lo))`` with ``P``
    the regularised lower incomplete gamma function; the complementary form
    is used when both arguments are large to avoid cancellation.
    """
    t = np.asarray(t, dtype=float)
    s = 0.5 - H
    if hi == np.inf:
        span = gammaincc(s, t * lo)
    else:
        lower = gammainc(s, t * hi) - gammainc(s, t * lo)
        upper = gammaincc(s, t * lo) - gammaincc(s, t * hi)
        span = np.where(t * lo > 1.0, upper, lower)
    return t ** (-s) * span


def _cell_moments(beta, rho, count):
    """``int_rho^1 y**(k - beta) dy`` for ``k = 0..count-1``, stable for rho -> 1."""
    e = np.arange(count) + 1.0 - beta
    return -np.expm1(e * np.log(rho)) / e


def _gauss_from_moments(mu, p, support=(0.0, 1.0)):
    """Gaussian rule with ``p`` points from the first ``2p`` moments (Golub-Welsch).

    Nodes outside ``support`` or nonpositive weights betray lost precision
    and raise :class:`RuleConditioningError`.
    """
    hankel = np.array([[mu[i + j] for j in range(p + 1)] for i in range(p + 1)])
    try:
        R = np.linalg.cholesky(hankel).T
    except np.linalg.LinAlgError as exc:
        raise RuleConditioningError(
            f"moment matrix with {p} points is not positive definite; "
            "reduce points_per_cell or use more (narrower) cells"
        ) from exc
    diag = np.diag(R)
    if diag.min() <= 1e-13 * diag.max():
        raise RuleConditioningError(
            f"moment matrix with {p} points is ill-conditioned; "
            "reduce points_per_cell or use more (narrower) cells"
        )
    alpha = np.empty(p)
    off = np.empty(p - 1)
    for j in range(p):
        alpha[j] = R[j, j + 1] / R[j, j] - (R[j - 1, j] / R[j - 1, j - 1] if j else 0.0)
        if j < p - 1:
            off[j] = R[j + 1, j + 1] / R[j, j]
    jacobi = np.diag(alpha) + np.diag(off, 1) + np.diag(off, -1)
    x, vec = np.linalg.eigh(jacobi)
    w = mu[0] * vec[0] ** 2
    lo, hi = support
    slack = 1e-12 * (hi - lo)
    if x[0] < lo - slack or x[-1] > hi + slack or np.any(w <= 0):
        raise RuleConditioningError(
            f"{p}-point rule lost precision (nodes left the cell); "
            "reduce points_per_cell or use more (narrower) cells"
        )
    return x, w


def build_rule(H, T, m, p, cuts=None, dt=None, lump_tail=False):
    """Gaussian rule for ``lam(x) dx`` on ``m`` geometric cells of ``p`` points.

    Parameters
    ----------
    H : float
        Hurst parameter of the target kernel ``t**(H - 1/2)``.
    T : float
        Horizon; sets the default lower cut ``1 / (10 T)``.
    m, p : int
        Number of cells and points per cell.
    cuts : (float, float), optional
        ``(cut_low, cut_high)``.  The default upper cut is ``10 / dt``.
    dt : float, optional
        Intended simulation step; defaults to ``T / 256``.
    lump_tail : bool
        Add one node carrying the mass of ``lam`` on ``(0, cut_low)`` at its
        mean.  Off by default since it can break ``Kbar <= K``.
    """
    if not 0.0 < H < 0.5:
        raise ValueError(f"H must lie in (0, 1/2), got {H}")
    if m < 1 or p < 1:
        raise ValueError("need at least one cell and one point per cell")
    if cuts is None:
        dt = T / 256 if dt is None else dt
        cuts = (1.0 / (10.0 * T), 10.0 / dt)
    lo, hi = map(float, cuts)
    if not 0.0 < lo < hi:
        raise ValueError("cuts must satisfy 0 < cut_low < cut_high")
    beta = H + 0.5
    norm = gamma_fn(0.5 - H)
    edges = lo * (hi / lo) ** (np.arange(m + 1) / m)
    nodes, weights = [], []
    if lump_tail:
        nodes.append(lo * (1.0 - beta) / (2.0 - beta))
        weights.append(lo ** (1.0 - beta) / ((1.0 - beta) * norm))
    for a, b in zip(edges[:-1], edges[1:]):
        mu = _cell_moments(beta, a / b, 2 * p + 1)
        y, w = _gauss_from_moments(mu, p, (a / b, 1.0))
        nodes.extend(b * y)
        weights.extend(w * b ** (1.0 - beta) / norm)
    design = RuleDesign(lo, hi, int(m), int(p), bool(lump_tail))
    tol = _tolerance_estimate(beta, norm, edges, p, T)
    return QuadratureRule(
        tuple(nodes), tuple(weights), target_H=float(H), design=design, tolerance=tol
    )


def _tolerance_estimate(beta, norm, edges, p, T, n_points=256):
    """Twice the gap between the p- and (p+1)-point cell rules, on ``[1e-3 T, T]``.

    NaN when the (p+1)-point moment matrix is too ill-conditioned to build.
    """
    t = T * np.logspace(-3.0, 0.0, n_points)
    gap = np.zeros_like(t)
    for a, b in zip(edges[:-1], edges[1:]):
        mu = _cell_moments(beta, a / b, 2 * p + 3)
        try:
            y1, w1 = _gauss_from_moments(mu, p, (a / b, 1.0))
            y2, w2 = _gauss_from_moments(mu, p + 1, (a / b, 1.0))
        except RuleConditioningError:
            return float("nan")
        g1 = np.exp(-np.multiply.outer(t, b * y1)) @ w1
        g2 = np.exp(-np.multiply.outer(t, b * y2)) @ w2
        gap += np.abs(g2 - g1) * b ** (1.0 - beta) / norm
    return float(2.0 * gap.max())


def ladder_rule(H, T, n_nodes, points_per_cell=2, decades_per_cell=1.0, center=None):
    """Rule with ``n_nodes`` nodes whose cuts widen with the node count.

    Cells keep a fixed width of ``decades_per_cell`` decades and are centred
    (geometrically) on ``center`` (default ``1 / T``), so doubling the node
    count doubles the covered frequency band in log scale.
    """
    if n_nodes % points_per_cell:
        raise ValueError("n_nodes must be a multiple of points_per_cell")
    m = n_nodes // points_per_cell
    c = 1.0 / T if center is None else center
    half = 10.0 ** (0.5 * m * decades_per_cell)
    return build_rule(H, T, m, points_per_cell, cuts=(c / half, c * half))


def to_kernel(rule, scale=1.0):
    """Sum-of-exponentials kernel ``scale * sum_i w_i exp(-x_i t)``."""
    if len(rule) == 0:
        raise ValueError("empty quadrature rule gives the zero kernel")
    order = np.argsort(rule.nodes)
    return Kernel.sum_of_exponentials(
        np.asarray(rule.nodes)[order], np.asarray(rule.weights)[order], scale=scale
    )
