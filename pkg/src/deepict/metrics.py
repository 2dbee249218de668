"""Prediction metrics: relative error of the nonlinear effect, integrated
squared survival error against the truth, and an interval-censored
integrated Brier score.

Survival predictors are callables ``surv(t, idx)``: ``t`` is an
``(m, k)`` array of times for the subjects listed in ``idx`` (length
``m``) and the result holds the matching survival probabilities.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

MSE_GRID = 100
IBS_GRID = 200


@dataclass
class MetricReport:
    re_phi: float
    mse_surv: float
    ibs: float = float("nan")
    mse_grid: int = MSE_GRID
    ibs_grid: int = IBS_GRID

    def formatted(self) -> dict:
        """Values as tabulated: MSE scaled by 100."""
        return {"RE": self.re_phi, "MSEx100": 100.0 * self.mse_surv, "IBS": self.ibs}


def relative_error(phi_hat, phi_true) -> float:
    phi_hat = np.asarray(phi_hat, dtype=float)
    phi_true = np.asarray(phi_true, dtype=float)
    if phi_hat.shape != phi_true.shape or phi_hat.size == 0:
        raise ValueError("phi_hat and phi_true must be nonempty and of equal length")
    denom = np.sum(phi_true ** 2)
    if denom == 0:
        raise ValueError("relative error is undefined when the true effect is identically zero")
    return float(np.sqrt(np.sum((phi_hat - phi_true) ** 2) / denom))


def _trapezoid(y, x):
    return np.sum(0.5 * (y[..., 1:] + y[..., :-1]) * np.diff(x, axis=-1), axis=-1)


def mse_survival(surv_hat, surv_true, t_true, n_quad: int = MSE_GRID, t_max=None) -> float:
    """Mean over subjects of ``(1/T_i) int_0^T_i (S - S_hat)^2 dt``.

    With ``t_max`` each ``T_i`` is replaced by ``min(T_i, t_max)``, which
    keeps the integral inside the window where the baseline hazard is
    identified (e.g. the study length).
    """
    T = np.asarray(t_true, dtype=float)
    if t_max is not None:
        T = np.minimum(T, float(t_max))
    keep = T > 0
    if not np.all(keep):
        warnings.warn(f"skipping {np.sum(~keep)} subjects with T = 0", RuntimeWarning, stacklevel=2)
    idx = np.flatnonzero(keep)
    grid = np.linspace(0.0, 1.0, n_quad)[None, :] * T[idx, None]
    diff = surv_true(grid, idx) - surv_hat(grid, idx)
    return float(np.mean(_trapezoid(diff ** 2, grid) / T[idx]))


def brier_indicator(S_t, S_L, S_R, t, L, R):
    """Approximate ``I(T > t)`` given ``T`` in ``(L, R]``.

    1 up to ``L``, 0 past ``R``, and the conditional survival ratio in
    between (``S(t)/S(L)`` when ``R`` is infinite).
    """
    S_R = np.where(np.isinf(R), 0.0, S_R)
    den = S_L - S_R
    flat = den <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(flat, 0.5, (S_t - S_R) / den)
    ind = np.where(t <= L, 1.0, np.where(t > R, 0.0, np.clip(ratio, 0.0, 1.0)))
    return ind, bool(np.any(flat & (t > L) & (t <= R)))


def ibs(surv_hat, L, R, n_grid: int = IBS_GRID) -> float:
    """Integrated Brier score over ``[0, tau]``, ``tau`` the largest finite endpoint."""
    L = np.asarray(L, dtype=float)
    R = np.asarray(R, dtype=float)
    ends = np.concatenate([L, R])
    ends = ends[np.isfinite(ends)]
    if ends.size == 0:
        raise ValueError("need at least one finite endpoint")
    tau = float(ends.max())
    n = L.size
    idx = np.arange(n)
    grid = np.broadcast_to(np.linspace(0.0, tau, n_grid), (n, n_grid))
    S_t = surv_hat(grid, idx)
    S_L = surv_hat(L[:, None], idx)
    S_R = surv_hat(np.where(np.isinf(R), tau, R)[:, None], idx)
    ind, flat = brier_indicator(S_t, S_L, S_R, grid, L[:, None], R[:, None])
    if flat:
        warnings.warn("flat predicted survival on a censoring interval; indicator set to 0.5", RuntimeWarning, stacklevel=2)
    return float(np.mean(_trapezoid((ind - S_t) ** 2, grid) / tau))
