"""Interval-censored data containers and the observed-data likelihood."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dnn import NeuralNet
from .splines import SplineBasis
from .transform import TransformationFamily

LOG_FLOOR = np.log(1e-300)


class Censor(enum.IntEnum):
    LEFT = 0
    INTERVAL = 1
    RIGHT = 2

    @classmethod
    def parse(cls, value) -> "Censor":
        if isinstance(value, Censor):
            return value
        if isinstance(value, str):
            if value.strip().isdigit():
                return cls(int(value))
            try:
                return cls[value.strip().upper()]
            except KeyError:
                raise ValueError(f"unknown censoring class {value!r}") from None
        return cls(int(value))


@dataclass(frozen=True)
class Observation:
    """One subject: censoring interval ``(L, R]``, class, and covariates."""

    L: float
    R: float
    censor: Censor
    x: tuple
    w: tuple

    def __post_init__(self):
        object.__setattr__(self, "censor", Censor.parse(self.censor))
        _check_interval(np.array([self.L]), np.array([self.R]), np.array([int(self.censor)]))


def _check_interval(L, R, censor):
    if np.any(~np.isin(censor, (0, 1, 2))):
        raise ValueError("censor codes must be 0 (left), 1 (interval) or 2 (right)")
    left, inter, right = censor == 0, censor == 1, censor == 2
    if np.any(L[left] != 0) or np.any(~np.isfinite(R[left])) or np.any(R[left] <= 0):
        raise ValueError("left-censored rows need L = 0 and finite R > 0")
    bad = inter & ~((L > 0) & (L < R) & np.isfinite(R))
    if np.any(bad):
        raise ValueError(f"interval-censored rows need 0 < L < R < inf (first bad row {np.flatnonzero(bad)[0]})")
    if np.any(~np.isinf(R[right])) or np.any(~np.isfinite(L[right])) or np.any(L[right] < 0):
        raise ValueError("right-censored rows need finite L >= 0 and R = inf")


@dataclass(frozen=True)
class IntervalData:
    """Column-oriented interval-censored sample.

    ``censor`` holds the integer codes of :class:`Censor`.
    """

    L: np.ndarray
    R: np.ndarray
    censor: np.ndarray
    X: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        L = np.asarray(self.L, dtype=float).ravel()
        R = np.asarray(self.R, dtype=float).ravel()
        c = np.asarray(self.censor, dtype=int).ravel()
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        n = L.size
        if X.shape[0] != n and X.size == n:
            X = X.reshape(n, -1)
        if W.shape[0] != n and W.size == n:
            W = W.reshape(n, -1)
        if not (R.size == c.size == X.shape[0] == W.shape[0] == n):
            raise ValueError("all columns must have the same number of rows")
        _check_interval(L, R, c)
        for name, val in (("L", L), ("R", R), ("censor", c), ("X", X), ("W", W)):
            object.__setattr__(self, name, val)

    @classmethod
    def from_observations(cls, obs: Sequence[Observation]) -> "IntervalData":
        return cls(
            L=[o.L for o in obs],
            R=[o.R for o in obs],
            censor=[int(o.censor) for o in obs],
            X=np.array([o.x for o in obs], dtype=float),
            W=np.array([o.w for o in obs], dtype=float),
        )

    def observations(self) -> list:
        return [
            Observation(float(self.L[i]), float(self.R[i]), Censor(int(self.censor[i])), tuple(self.X[i]), tuple(self.W[i]))
            for i in range(self.n)
        ]

    @property
    def n(self) -> int:
        return self.L.size

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def d(self) -> int:
        return self.W.shape[1]

    @property
    def left(self) -> np.ndarray:
        return self.censor == Censor.LEFT

    @property
    def interval(self) -> np.ndarray:
        return self.censor == Censor.INTERVAL

    @property
    def right(self) -> np.ndarray:
        return self.censor == Censor.RIGHT

    def finite_times(self) -> np.ndarray:
        t = np.concatenate([self.L, self.R])
        return t[np.isfinite(t)]

    def subset(self, idx) -> "IntervalData":
        idx = np.asarray(idx)
        return IntervalData(self.L[idx], self.R[idx], self.censor[idx], self.X[idx], self.W[idx])

    def augmentation_times(self):
        """``(t1, t2)``: ``t1 = R`` for left-censored subjects and ``L``
        otherwise; ``t2 = R`` for interval, ``L`` for right, ``t1`` for left."""
        t1 = np.where(self.left, self.R, self.L)
        t2 = np.where(self.interval, self.R, np.where(self.right, self.L, t1))
        return t1, t2


@dataclass
class ModelParams:
    """``(beta, gamma, net)`` together with the sieve basis and family.

    ``net=None`` fixes the nonlinear effect at zero (linear submodel).
    """

    beta: np.ndarray
    gamma: np.ndarray
    net: Optional[NeuralNet]
    basis: SplineBasis
    fam: TransformationFamily

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float).ravel()
        self.gamma = np.asarray(self.gamma, dtype=float).ravel()
        if np.any(self.gamma < 0):
            raise ValueError("spline coefficients must be nonnegative")
        if self.gamma.size != self.basis.n_basis:
            raise ValueError("gamma length must equal the number of basis functions")

    def copy(self) -> "ModelParams":
        return ModelParams(self.beta.copy(), self.gamma.copy(), None if self.net is None else self.net.copy(), self.basis, self.fam)

    def phi(self, W) -> np.ndarray:
        W = np.atleast_2d(np.asarray(W, dtype=float))
        if self.net is None:
            return np.zeros(W.shape[0])
        return self.net(W)

    def linear_predictor(self, X, W) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return X @ self.beta + self.phi(W)

    def cumhaz(self, t) -> np.ndarray:
        return self.basis.cumhaz(self.gamma, t)


class Design:
    """Basis evaluations at the subjects' endpoints, reused across EM iterations."""

    def __init__(self, data: IntervalData, basis: SplineBasis):
        self.data = data
        self.basis = basis
        self.ML = basis(data.L)
        self.MR = basis(np.where(data.right, np.inf, data.R))
        self.ML[data.left] = 0.0


def risk_cumhaz(params: ModelParams, obs: Observation, t) -> np.ndarray:
    """``Lambda_gamma(t) * exp(beta'x + phi(w))`` at times ``t`` for one subject."""
    lin = params.linear_predictor(np.atleast_2d(obs.x), np.atleast_2d(obs.w))[0]
    return params.cumhaz(t) * np.exp(lin)


def survival_fn(params: ModelParams, obs: Observation, t) -> np.ndarray:
    return params.fam.survival_factor(risk_cumhaz(params, obs, t))


def distribution_fn(params: ModelParams, obs: Observation, t) -> np.ndarray:
    """``1 - exp(-G[Lambda(t) exp(beta'x + phi(w))])``."""
    return -np.expm1(-params.fam.g(risk_cumhaz(params, obs, t)))


def as_data(data) -> IntervalData:
    if isinstance(data, IntervalData):
        return data
    return IntervalData.from_observations(list(data))


def survival_matrix(params: ModelParams, X, W, t) -> np.ndarray:
    """``S(t_k | x_i, w_i)`` with subjects on rows, times on columns."""
    lam = params.cumhaz(np.atleast_1d(t))
    e = np.exp(params.linear_predictor(X, W))
    return params.fam.survival_factor(e[:, None] * lam[None, :])


def survival_callable(params: ModelParams, X, W):
    """``surv(t, idx)`` predictor for subjects with covariates ``X``, ``W``
    (the form the metrics module expects)."""
    e = np.exp(params.linear_predictor(X, W))

    def surv(t, idx):
        t = np.asarray(t, dtype=float)
        lam = params.cumhaz(t.ravel()).reshape(t.shape)
        return params.fam.survival_factor(np.asarray(e)[idx].reshape(-1, 1) * lam)

    return surv


def endpoint_risks(params: ModelParams, data: IntervalData, design: Optional[Design] = None, phi=None):
    """``(U(L), U(R), exp(lin))`` per subject; ``U(R)`` is ``inf`` for right-censored."""
    if design is None:
        design = Design(data, params.basis)
    if phi is None:
        phi = params.phi(data.W)
    e = np.exp(data.X @ params.beta + phi)
    UL = (design.ML @ params.gamma) * e
    UR = (design.MR @ params.gamma) * e
    UR = np.where(data.right, np.inf, UR)
    return UL, UR, e


def subject_loglik(params: ModelParams, data: IntervalData, design: Optional[Design] = None, phi=None):
    """Per-subject log-likelihood contributions and the number of floored terms.

    Probabilities below ``1e-300`` are floored before the logarithm.
    """
    data = as_data(data)
    fam = params.fam
    UL, UR, _ = endpoint_risks(params, data, design, phi)
    out = np.empty(data.n)
    left, inter, right = data.left, data.interval, data.right
    with np.errstate(divide="ignore"):
        out[left] = np.log(-np.expm1(-fam.g(UR[left])))
        out[inter] = -fam.g(UL[inter]) + np.log(-np.expm1(-fam.g_increment(UL[inter], UR[inter])))
    out[right] = -fam.g(UL[right])
    floored = ~(out >= LOG_FLOOR)
    out[floored] = LOG_FLOOR
    return out, int(floored.sum())


def loglik(params: ModelParams, data: IntervalData, design: Optional[Design] = None, phi=None) -> float:
    """Observed-data log-likelihood (summed in a fixed order)."""
    terms, _ = subject_loglik(params, data, design, phi)
    return float(np.sum(terms))


def frailty_loglik(params: ModelParams, data: IntervalData, quad) -> float:
    """The same likelihood written as a frailty integral and evaluated with ``quad``.

    Independent of the closed-form survival factors; used as a check.
    """
    data = as_data(data)
    UL, UR, _ = endpoint_risks(params, data)
    eta = quad.nodes
    total = 0.0
    for i in range(data.n):
        sl = np.exp(-UL[i] * eta)
        sr = np.zeros_like(eta) if np.isinf(UR[i]) else np.exp(-UR[i] * eta)
        if data.censor[i] == Censor.LEFT:
            integrand = 1.0 - sr
        elif data.censor[i] == Censor.INTERVAL:
            integrand = sl - sr
        else:
            integrand = sl
        total += np.log(np.sum(quad.weights * integrand))
    return total
