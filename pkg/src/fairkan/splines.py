"""Uniform B-spline grids: basis evaluation, derivatives, fitting, refinement.

A grid of polynomial degree ``k`` with ``G`` interior intervals on
``[lo, hi]`` carries ``G + 2k + 1`` uniformly spaced knots (extended ``k``
knots past each end) and supports ``G + k`` basis functions.  Evaluation
uses the Cox-de Boor recursion restricted to the ``k + 1`` bases that are
nonzero at each point; derivatives use the lower-degree difference
recurrence, which on uniform knots reduces to binomial differencing scaled
by the knot spacing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, RefinementError, ShapeError

__all__ = [
    "SplineGrid",
    "basis_eval",
    "basis_derivative",
    "spline_eval",
    "fit_coefficients",
    "refine_grid",
]


@dataclass(frozen=True)
class SplineGrid:
    """Uniform extended knot grid for one family of B-spline bases."""

    order: int
    intervals: int
    domain_lo: float
    domain_hi: float
    knots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.order < 0:
            raise ConfigError(f"spline order must be >= 0, got {self.order}")
        if self.intervals < 1:
            raise ConfigError(f"grid must have >= 1 interval, got {self.intervals}")
        if not self.domain_lo < self.domain_hi:
            raise ConfigError(
                f"empty domain [{self.domain_lo}, {self.domain_hi}]"
            )
        h = (self.domain_hi - self.domain_lo) / self.intervals
        idx = np.arange(-self.order, self.intervals + self.order + 1, dtype=float)
        object.__setattr__(self, "knots", self.domain_lo + idx * h)

    @property
    def spacing(self) -> float:
        return (self.domain_hi - self.domain_lo) / self.intervals

    @property
    def basis_count(self) -> int:
        return self.intervals + self.order

    def clamp(self, x):
        """Clip values into the closed domain (the only out-of-range policy)."""
        return np.clip(x, self.domain_lo, self.domain_hi)


def _interval_index(grid: SplineGrid, x: np.ndarray) -> np.ndarray:
    """Index of the knot interval containing each (already clamped) x.

    The last interval is closed, so ``x == domain_hi`` maps to ``G - 1``.
    """
    raw = np.floor((x - grid.domain_lo) / grid.spacing).astype(np.intp)
    return np.clip(raw, 0, grid.intervals - 1)


def _window_bases(grid: SplineGrid, x: np.ndarray, degree: int):
    """Nonzero B-spline bases of ``degree`` at each x, plus interval indices.

    Returns ``(iv, w)`` with ``w[n, j] = B_{iv[n] + k - degree + j, degree}(x[n])``
    for ``j = 0..degree``, where indexing is over the full extended knot
    vector shifted so that basis 0 is the leftmost degree-``k`` basis.
    """
    iv = _interval_index(grid, x)
    span = iv + grid.order  # knots[span] <= x <= knots[span + 1]
    t = grid.knots
    n = x.shape[0]
    w = np.zeros((n, degree + 1))
    w[:, 0] = 1.0
    rights = np.empty((n, degree + 1))
    lefts = np.empty((n, degree + 1))
    for j in range(1, degree + 1):
        lefts[:, j] = x - t[span + 1 - j]
        rights[:, j] = t[span + j] - x
        saved = np.zeros(n)
        for r in range(j):
            temp = w[:, r] / (rights[:, r + 1] + lefts[:, j - r])
            w[:, r] = saved + rights[:, r + 1] * temp
            saved = lefts[:, j - r] * temp
        w[:, j] = saved
    return iv, w


def _window_derivs(grid: SplineGrid, x: np.ndarray, deriv_order: int):
    """Nonzero derivative values ``d^r B_{iv+m,k}/dx^r`` for ``m = 0..k``.

    Uses the uniform-knot identity: the r-th derivative of a degree-k basis
    is the r-fold backward difference of degree-(k - r) bases divided by
    the knot spacing to the r-th power.
    """
    k = grid.order
    r = deriv_order
    iv, low = _window_bases(grid, x, k - r)
    coeffs = [(-1) ** j * math.comb(r, j) for j in range(r + 1)]
    n = x.shape[0]
    out = np.zeros((n, k + 1))
    for m in range(k + 1):
        acc = np.zeros(n)
        for j, c in enumerate(coeffs):
            pos = m + j - r
            if 0 <= pos <= k - r:
                acc += c * low[:, pos]
        out[:, m] = acc
    out /= grid.spacing**r
    return iv, out


def _scatter(grid: SplineGrid, iv: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Expand windowed values into dense rows over all basis functions."""
    n = iv.shape[0]
    dense = np.zeros((n, grid.basis_count))
    cols = iv[:, None] + np.arange(grid.order + 1)[None, :]
    np.put_along_axis(dense, cols, w, axis=1)
    return dense


def _as_points(x):
    arr = np.asarray(x, dtype=float)
    return arr.reshape(-1), arr.ndim == 0


def basis_eval(grid: SplineGrid, x) -> np.ndarray:
    """Evaluate all basis functions at ``x`` (scalar or 1-D array).

    Out-of-domain inputs are clamped to the boundary first.  Each row has
    at most ``k + 1`` nonzero entries and sums to 1.
    """
    pts, scalar = _as_points(x)
    iv, w = _window_bases(grid, grid.clamp(pts), grid.order)
    dense = _scatter(grid, iv, w)
    return dense[0] if scalar else dense


def basis_derivative(grid: SplineGrid, x, deriv_order: int) -> np.ndarray:
    """Evaluate ``d^r B_i / dx^r`` for all bases; ``r`` must not exceed the degree."""
    if deriv_order not in (1, 2):
        raise ConfigError(f"deriv_order must be 1 or 2, got {deriv_order}")
    if deriv_order > grid.order:
        raise ConfigError(
            f"derivative order {deriv_order} exceeds spline degree {grid.order}"
        )
    pts, scalar = _as_points(x)
    iv, w = _window_derivs(grid, grid.clamp(pts), deriv_order)
    dense = _scatter(grid, iv, w)
    return dense[0] if scalar else dense


def _check_coeffs(grid: SplineGrid, coeffs) -> np.ndarray:
    c = np.asarray(coeffs, dtype=float)
    if c.shape != (grid.basis_count,):
        raise ShapeError(
            f"expected {grid.basis_count} coefficients, got shape {c.shape}"
        )
    return c


def spline_eval(grid: SplineGrid, coeffs, x) -> np.ndarray:
    """Evaluate the coefficient-weighted spline at ``x``."""
    c = _check_coeffs(grid, coeffs)
    pts, scalar = _as_points(x)
    iv, w = _window_bases(grid, grid.clamp(pts), grid.order)
    cols = iv[:, None] + np.arange(grid.order + 1)[None, :]
    vals = np.sum(w * c[cols], axis=1)
    return float(vals[0]) if scalar else vals


def design_matrix(grid: SplineGrid, xs) -> np.ndarray:
    """Dense matrix of basis values, one row per sample point."""
    return basis_eval(grid, np.asarray(xs, dtype=float).reshape(-1))


def fit_coefficients(grid: SplineGrid, xs, ys) -> np.ndarray:
    """Least-squares spline coefficients for samples ``(xs, ys)``.

    ``ys`` may be 2-D ``(n_points, n_targets)`` to fit many splines on the
    shared grid in one solve.
    """
    a = design_matrix(grid, xs)
    ys = np.asarray(ys, dtype=float)
    sol, _, _, _ = np.linalg.lstsq(a, ys, rcond=None)
    return sol


def refine_grid(grid: SplineGrid, coeffs, new_intervals: int):
    """Transfer a spline onto a finer uniform grid on the same domain.

    Samples the coarse spline at 4x the new basis count and least-squares
    fits the finer basis.  Returns ``(new_grid, new_coeffs, residual)``
    where ``residual`` upper-bounds |old - new| anywhere on the domain
    (dense-probe max with a 5% safety margin for the gaps between probes).
    """
    c = _check_coeffs(grid, coeffs)
    if new_intervals <= grid.intervals:
        raise ConfigError(
            f"refinement needs more intervals than {grid.intervals}, "
            f"got {new_intervals}"
        )
    fine = SplineGrid(grid.order, new_intervals, grid.domain_lo, grid.domain_hi)
    xs = np.linspace(grid.domain_lo, grid.domain_hi, 4 * fine.basis_count)
    ys = spline_eval(grid, c, xs)
    new_coeffs = fit_coefficients(fine, xs, ys)
    probe = np.linspace(grid.domain_lo, grid.domain_hi, 16 * fine.basis_count)
    gap = spline_eval(fine, new_coeffs, probe) - spline_eval(grid, c, probe)
    residual = 1.05 * float(np.max(np.abs(gap))) + 1e-15
    if not np.isfinite(residual):
        raise RefinementError(
            f"refinement {grid.intervals} -> {new_intervals} produced "
            f"non-finite residual"
        )
    return fine, new_coeffs, residual
