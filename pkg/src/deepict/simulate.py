"""Simulation designs: six nonlinear-effect cases under periodic examinations."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .likelihood import Censor, IntervalData, Observation
from .transform import TransformationFamily

CASE_DIM = {1: 4, 2: 4, 3: 4, 4: 10, 5: 10, 6: 10}
MAX_EXAMS = 64


def phi_case(case: int, w) -> np.ndarray:
    """True nonlinear effect for design ``case`` at rows of ``w``."""
    if case not in CASE_DIM:
        raise ValueError(f"case must be one of 1..6, got {case}")
    w = np.atleast_2d(np.asarray(w, dtype=float))
    if w.shape[1] != CASE_DIM[case]:
        raise ValueError(f"case {case} needs {CASE_DIM[case]} covariates, got {w.shape[1]}")
    W = [w[:, j] for j in range(w.shape[1])]
    if case == 1:
        return W[0] + W[1] / 2 + W[2] / 3 + W[3] / 4
    if case == 2:
        return W[0] ** 2 + 2 * W[1] ** 2 + W[2] ** 3 + np.sqrt(W[3] + 1) - 1.9
    if case == 3:
        return W[0] ** 2 + np.log(W[1] + 2) / 2 + 2 * np.sqrt(W[2] * W[3] + 1) - 2.6
    if case == 4:
        return sum(W[j] / (j + 1) for j in range(10))
    if case == 5:
        return sum(W[:8]) + W[8] ** 2 + 2 * W[9] ** 2 - 1.0
    return (
        np.log(W[0] + 1) + W[1] ** 2 * W[2] ** 3 + W[3] / 2 + np.sqrt(W[4] * W[5] + 1)
        + W[6] ** 2 + np.exp(W[7] / 2) + (W[8] + W[9]) ** 2 - 2.7
    )


@dataclass
class SimConfig:
    n: int = 500
    case: int = 1
    r_true: float = 0.0
    beta_true: tuple = (0.5, -0.5)
    lambda_slope: Optional[float] = None
    gap_mean: float = 0.5
    study_length: float = 8.0
    seed: int = 0

    def __post_init__(self):
        if self.case not in CASE_DIM:
            raise ValueError(f"case must be one of 1..6, got {self.case}")
        if self.lambda_slope is None:
            self.lambda_slope = 0.1 if self.d == 4 else 0.2
        if self.lambda_slope <= 0:
            raise ValueError("lambda_slope must be positive")

    @property
    def d(self) -> int:
        return CASE_DIM[self.case]


@dataclass
class SimRecord:
    observation: Observation
    t_true: float
    phi_true: float


@dataclass
class SimDataset:
    data: IntervalData
    t_true: np.ndarray
    phi_true: np.ndarray
    split: dict
    config: SimConfig = field(repr=False)

    def part(self, name: str) -> IntervalData:
        return self.data.subset(self.split[name])

    def records(self) -> list:
        return [SimRecord(o, float(t), float(p)) for o, t, p in zip(self.data.observations(), self.t_true, self.phi_true)]

    def true_survival(self, idx=None):
        """``surv(t, idx)`` for the true model, over subjects ``idx`` of the sample."""
        idx = np.arange(self.data.n) if idx is None else np.asarray(idx)
        return true_survival_fn(self.config, self.data.X[idx], self.data.W[idx])


def true_survival_fn(config: SimConfig, X, W):
    """``surv(t, idx)`` giving ``exp(-G[slope * t * exp(beta'x + phi(w))])``."""
    lin = np.atleast_2d(X) @ np.asarray(config.beta_true, dtype=float) + phi_case(config.case, W)
    e = np.exp(lin)
    fam = TransformationFamily(config.r_true)

    def surv(t, idx):
        t = np.asarray(t, dtype=float)
        return fam.survival_factor(config.lambda_slope * t * e[np.asarray(idx)].reshape(-1, 1))

    return surv


def draw_failure(config: SimConfig, x, w, rng=None, u=None) -> np.ndarray:
    """Invert ``S(t) = exp(-G[slope * t * exp(beta'x + phi(w))])`` at uniform draws."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    lin = x @ np.asarray(config.beta_true, dtype=float) + phi_case(config.case, w)
    if u is None:
        u = rng.uniform(size=lin.shape[0])
    u = np.asarray(u, dtype=float)
    fam = TransformationFamily(config.r_true)
    return fam.g_inverse(-np.log(u)) / (config.lambda_slope * np.exp(lin))


def censor(t_true, config: SimConfig, rng=None, gaps=None):
    """Bracket each failure time by examination times.

    Examinations start one exponential gap after time 0 and stop at the
    study length.  Returns ``(L, R, censor_codes)``.
    """
    t = np.atleast_1d(np.asarray(t_true, dtype=float))
    if gaps is None:
        gaps = rng.exponential(config.gap_mean, size=(t.size, MAX_EXAMS))
    s = np.cumsum(np.atleast_2d(gaps), axis=1)
    s = np.where(s <= config.study_length, s, np.inf)
    before = np.where(s < t[:, None], s, -np.inf)
    L = np.max(before, axis=1)
    L = np.where(np.isfinite(L), L, 0.0)
    after = np.where(s >= t[:, None], s, np.inf)
    R = np.min(after, axis=1)
    code = np.where(np.isinf(R), Censor.RIGHT, np.where(L == 0, Censor.LEFT, Censor.INTERVAL)).astype(int)
    return L, R, code


def split_indices(n: int, rng) -> dict:
    """Random 64/16/20 train/validation/test partition."""
    perm = rng.permutation(n)
    n_train = int(round(0.64 * n))
    n_val = int(round(0.16 * n))
    return {
        "train": np.sort(perm[:n_train]),
        "validation": np.sort(perm[n_train:n_train + n_val]),
        "test": np.sort(perm[n_train + n_val:]),
    }


def generate(config: SimConfig) -> SimDataset:
    if config.n < 25:
        raise ValueError("n must be at least 25")
    rng = np.random.default_rng(config.seed)
    n = config.n
    X = np.column_stack([rng.standard_normal(n), rng.binomial(1, 0.5, n).astype(float)])
    W = rng.uniform(-1.0, 1.0, size=(n, config.d))
    t_true = draw_failure(config, X, W, rng)
    L, R, code = censor(t_true, config, rng)
    split = split_indices(n, rng)
    data = IntervalData(L, R, code, X, W)
    return SimDataset(data, t_true, phi_case(config.case, W), split, config)
