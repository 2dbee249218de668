"""Profile-likelihood standard errors for the linear coefficients."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .em import EmConfig, FitResult, run_em
from .likelihood import Design, IntervalData, subject_loglik

PROFILE_MAX_ITERS = 50


@dataclass
class CovarianceResult:
    info_hat: np.ndarray
    cov: np.ndarray
    se: np.ndarray
    h_used: float
    scores: Optional[np.ndarray] = None


def profile_refit(data: IntervalData, fit: FitResult, beta_fixed, config: Optional[EmConfig] = None,
                  seed=None, max_iters: int = PROFILE_MAX_ITERS):
    """Maximize over the spline coefficients and the network at fixed ``beta``.

    Warm-starts from the fitted nuisance parameters and reruns EM with the
    ``beta`` step skipped.  Returns ``(params, per_subject_loglik)``.
    """
    config = fit.config if config is None else config
    params = fit.params.copy()
    params.beta = np.asarray(beta_fixed, dtype=float).copy()
    rng = np.random.default_rng(fit.seed if seed is None else seed)
    res = run_em(data, params, config, rng, update_beta=False, max_iters=max_iters)
    if not res.converged:
        warnings.warn(f"profile refit stopped after {max_iters} iterations without meeting tol", RuntimeWarning, stacklevel=2)
    terms, _ = subject_loglik(res.params, data, Design(data, res.params.basis))
    return res.params, terms


def covariance_from_scores(scores, h: float = float("nan")) -> CovarianceResult:
    """``cov = (n I)^-1`` with ``I`` the mean outer product of per-subject scores."""
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    n = scores.shape[0]
    info = scores.T @ scores / n
    info = 0.5 * (info + info.T)
    try:
        if np.linalg.cond(info) > 1e12:
            raise np.linalg.LinAlgError
        cov = np.linalg.inv(n * info)
    except np.linalg.LinAlgError:
        warnings.warn("estimated information is numerically singular; using a pseudo-inverse", RuntimeWarning, stacklevel=2)
        cov = np.linalg.pinv(n * info)
    cov = 0.5 * (cov + cov.T)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return CovarianceResult(info, cov, se, h, scores)


def covariance(data: IntervalData, fit: FitResult, config: Optional[EmConfig] = None,
               h_mult: float = 1.0, seed=None, max_iters: int = PROFILE_MAX_ITERS) -> CovarianceResult:
    """Forward-difference profile scores with step ``h_mult / sqrt(n)``.

    The base point is itself profiled with the same random stream as the
    perturbed refits, so SGD noise largely cancels in the differences.
    """
    n = data.n
    h = h_mult / np.sqrt(n)
    beta_hat = fit.params.beta
    _, base = profile_refit(data, fit, beta_hat, config, seed, max_iters)
    scores = np.empty((n, beta_hat.size))
    for j in range(beta_hat.size):
        b = beta_hat.copy()
        b[j] += h
        _, pert = profile_refit(data, fit, b, config, seed, max_iters)
        scores[:, j] = (pert - base) / h
    return covariance_from_scores(scores, h)
