"""Monotone (integrated) spline bases for the cumulative baseline hazard.

``M_l`` below are I-splines: running integrals of M-splines of order
``degree`` normalized to unit mass, so each rises from 0 at ``a`` to 1 at
``b``.  With ``p`` interior knots there are ``p + degree`` of them and
``sum_l gamma_l M_l(t)`` is nondecreasing whenever ``gamma >= 0``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SplineConfigError(ValueError):
    pass


def bspline_basis(t, knots, order):
    """All B-splines of ``order`` on ``knots`` evaluated at ``t``.

    Cox-de Boor recursion.  The last nonempty knot span is closed on the
    right so the basis still sums to one at the upper boundary.

    Returns
    -------
    ndarray of shape (len(t), len(knots) - order)
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    knots = np.asarray(knots, dtype=float)
    nspan = len(knots) - 1
    lo, hi = knots[:-1], knots[1:]
    B = ((t[:, None] >= lo) & (t[:, None] < hi)).astype(float)
    nonempty = np.flatnonzero(hi > lo)
    last = nonempty[-1]
    B[t == knots[last + 1], last] = 1.0
    for k in range(2, order + 1):
        nb = nspan - k + 1
        left_den = knots[k - 1:k - 1 + nb] - knots[:nb]
        right_den = knots[k:k + nb] - knots[1:1 + nb]
        with np.errstate(divide="ignore", invalid="ignore"):
            left = np.where(left_den > 0, (t[:, None] - knots[:nb]) / left_den, 0.0)
            right = np.where(right_den > 0, (knots[k:k + nb] - t[:, None]) / right_den, 0.0)
        B = left * B[:, :nb] + right * B[:, 1:nb + 1]
    return B


@dataclass(frozen=True)
class SplineBasis:
    """I-spline basis of a given degree on ``[a, b]``.

    Evaluation clamps ``t`` into ``[a, b]``; ``t = inf`` gives all ones.
    """

    degree: int
    boundary: tuple
    interior_knots: tuple

    def __post_init__(self):
        a, b = self.boundary
        if self.degree < 1:
            raise SplineConfigError("spline degree must be >= 1")
        if not (np.isfinite(a) and np.isfinite(b) and a < b):
            raise SplineConfigError(f"invalid boundary {self.boundary!r}")
        full = np.concatenate([[a], self.interior_knots, [b]])
        if np.any(np.diff(full) <= 0):
            raise SplineConfigError("knot vector is not strictly increasing")

    @property
    def n_basis(self) -> int:
        return len(self.interior_knots) + self.degree

    @property
    def knots(self) -> np.ndarray:
        """Clamped knot vector of the underlying order-``degree`` M-splines."""
        a, b = self.boundary
        k = self.degree
        return np.concatenate([np.full(k, a), self.interior_knots, np.full(k, b)])

    def _clamp(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < 0):
            raise ValueError("spline evaluation requires t >= 0")
        a, b = self.boundary
        return np.clip(t, a, b)

    def mspline(self, t):
        """Unit-mass M-splines (the derivatives of the I-splines)."""
        t = self._clamp(t)
        kn = self.knots
        k = self.degree
        B = bspline_basis(t, kn, k)
        width = kn[k:] - kn[:-k]
        return B * (k / width)

    def __call__(self, t):
        """I-spline values, shape ``(len(t), n_basis)``."""
        t = self._clamp(t)
        a, b = self.boundary
        k = self.degree
        aug = np.concatenate([np.full(k + 1, a), self.interior_knots, np.full(k + 1, b)])
        B = bspline_basis(t, aug, k + 1)
        # I_l = sum_{j >= l} B_{j,k+1}; column 0 of B only feeds the sum, never a basis
        tail = np.cumsum(B[:, ::-1], axis=1)[:, ::-1]
        return np.clip(tail[:, 1:], 0.0, 1.0)

    eval = __call__

    def cumhaz(self, gamma, t):
        """``sum_l gamma_l M_l(t)``."""
        gamma = np.asarray(gamma, dtype=float)
        if np.any(gamma < 0):
            raise ValueError("spline coefficients must be nonnegative")
        return self(t) @ gamma


def build_basis(times, degree: int = 3, n_interior: int = 3, placement: str = "quantile") -> SplineBasis:
    """Build an I-spline basis spanning the finite observation times.

    Interior knots sit at equally spaced empirical quantiles (linear
    interpolation) or equally spaced points between the extreme times.
    Knots collapsed by ties are nudged apart by ``1e-9 * (b - a)``.
    """
    times = np.asarray(times, dtype=float).ravel()
    times = times[np.isfinite(times)]
    if np.unique(times).size < 2:
        raise SplineConfigError("need at least two distinct finite observation times")
    if n_interior < 0:
        raise SplineConfigError("n_interior must be >= 0")
    a, b = float(times.min()), float(times.max())
    probs = np.arange(1, n_interior + 1) / (n_interior + 1)
    if placement == "quantile":
        inner = np.quantile(times, probs)
    elif placement == "uniform":
        inner = a + probs * (b - a)
    else:
        raise SplineConfigError(f"unknown knot placement {placement!r}")
    eps = 1e-9 * (b - a)
    inner = np.asarray(inner, dtype=float)
    prev = a
    for j in range(len(inner)):
        if inner[j] <= prev:
            inner[j] = prev + eps
        prev = inner[j]
    if len(inner) and inner[-1] >= b:
        raise SplineConfigError("interior knots collide with the upper boundary after de-duplication")
    return SplineBasis(degree=int(degree), boundary=(a, b), interior_knots=tuple(float(v) for v in inner))
