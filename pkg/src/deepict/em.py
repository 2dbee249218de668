"""EM algorithm with Poisson data augmentation for the sieve estimator.

Each iteration computes the conditional expectations of the frailty and
of the latent Poisson counts under the current parameters (E-step), then
runs SGD on the network, takes one damped Newton step on the profiled
objective for ``beta``, and updates the spline coefficients in closed
form.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .dnn import NetConfig, init_net, recenter, train_epoch
from .likelihood import Design, IntervalData, ModelParams, endpoint_risks, subject_loglik
from .splines import SplineBasis, build_basis
from .transform import QuadratureRule, TransformationFamily, build_quadrature

log = logging.getLogger(__name__)


class NumericalFailure(RuntimeError):
    """The fit produced a non-finite log-likelihood."""

    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = list(trace or [])


@dataclass
class EmConfig:
    r: float = 0.0
    max_iters: int = 500
    tol: float = 1e-3
    quad_order: int = 30
    net_config: Optional[NetConfig] = field(default_factory=NetConfig)
    degree: int = 3
    n_interior: int = 3
    knot_placement: str = "quantile"
    init_gamma: float = 0.01
    beta_max_halvings: int = 10

    @property
    def freeze_phi(self) -> bool:
        return self.net_config is None


@dataclass
class EStepCache:
    """Conditional expectations given the current iterate.

    ``e_zl``/``e_yl`` split ``e_z``/``e_y`` across basis functions.
    ``m_star`` holds ``(dL + dI) M_l(R) + dR M_l(L)``.
    """

    e_eta: np.ndarray
    e_z: np.ndarray
    e_y: np.ndarray
    e_zl: np.ndarray
    e_yl: np.ndarray
    m_star: np.ndarray
    degenerate: int = 0

    @property
    def counts(self) -> np.ndarray:
        """``E(Z_il) + (dI + dR) E(Y_il)``; ``e_yl`` is already zero for left subjects."""
        return self.e_zl + self.e_yl

    @property
    def exposure(self) -> np.ndarray:
        """``E(eta_i) * m_star_il``."""
        return self.e_eta[:, None] * self.m_star


@dataclass
class FitResult:
    params: ModelParams
    loglik_trace: list
    converged: bool
    n_iter: int
    floored_terms: int
    degenerate_terms: int
    sgd_rejections: int = 0
    seed: Optional[int] = None
    config: Optional[EmConfig] = None
    covariance: Optional[object] = None

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1]

    @property
    def beta(self) -> np.ndarray:
        return self.params.beta


# -- expectations on arrays of risks ---------------------------------------

def _neg_expm1(x):
    return -np.expm1(-x)


def eta_mean(fam: TransformationFamily, censor, UL, UR) -> np.ndarray:
    """Posterior mean of the frailty given the censoring class."""
    censor = np.asarray(censor)
    UL = np.asarray(UL, dtype=float)
    UR = np.asarray(UR, dtype=float)
    out = np.ones(censor.shape)
    r = fam.r
    if r == 0.0:
        return out
    left, inter, right = censor == 0, censor == 1, censor == 2
    u = UR[left]
    with np.errstate(divide="ignore", invalid="ignore"):
        # (1 - S/(1+ru)) / (1 - S) rewritten as 1 + S r u / ((1 + r u)(1 - S))
        s = fam.survival_factor(u)
        val = 1.0 + s * r * u / ((1.0 + r * u) * _neg_expm1(fam.g(u)))
    out[left] = np.where(u > 0, val, 1.0 + r)
    ul, ur = UL[inter], UR[inter]
    with np.errstate(divide="ignore", invalid="ignore"):
        one_minus_rho = _neg_expm1(fam.g_increment(ul, ur))
        val = r * (ur - ul) / ((1.0 + r * ul) * (1.0 + r * ur) * one_minus_rho) + 1.0 / (1.0 + r * ur)
    # flat interval: posterior collapses to the right-censored form
    out[inter] = np.where(ur > ul, val, 1.0 / (1.0 + r * ul))
    out[right] = 1.0 / (1.0 + r * UL[right])
    return out


def z_mean(fam: TransformationFamily, censor, UR) -> np.ndarray:
    """``E(Z_i)``: nonzero only for left-censored subjects."""
    censor = np.asarray(censor)
    UR = np.asarray(UR, dtype=float)
    out = np.zeros(censor.shape)
    left = censor == 0
    u = UR[left]
    with np.errstate(divide="ignore", invalid="ignore"):
        val = u / _neg_expm1(fam.g(u))
    out[left] = np.where(u > 0, val, 1.0)
    return out


def y_mean(fam: TransformationFamily, censor, UL, UR, quad: Optional[QuadratureRule] = None) -> np.ndarray:
    """``E(Y_i)``: nonzero only for interval-censored subjects.

    At ``r = 0`` this is ``dU / (1 - exp(-dU))``.  Otherwise the frailty
    integral is done by Gauss-Laguerre quadrature after folding the two
    ratio factors together, which leaves ``dU * eta * exp(-U(L) eta)``
    over the interval probability.
    """
    censor = np.asarray(censor)
    out = np.zeros(censor.shape)
    inter = censor == 1
    ul = np.asarray(UL, dtype=float)[inter]
    ur = np.asarray(UR, dtype=float)[inter]
    du = ur - ul
    with np.errstate(divide="ignore", invalid="ignore"):
        if fam.r == 0.0:
            val = du / _neg_expm1(du)
        else:
            if quad is None:
                quad = build_quadrature(fam)
            # integral of eta exp(-U(L) eta) f(eta), relative to S(L)
            first_moment = quad.expect(lambda eta: eta, ul) / fam.survival_factor(ul)
            val = du * first_moment / _neg_expm1(fam.g_increment(ul, ur))
    out[inter] = np.where(du > 0, val, 1.0)
    return out


def distribute(gamma, ML, MR, censor, e_z, e_y):
    """Split ``E(Z_i)`` and ``E(Y_i)`` across the spline basis functions."""
    censor = np.asarray(censor)
    gMR = MR * gamma
    gdM = (MR - ML) * gamma
    lam_r = gMR.sum(axis=1)
    lam_d = gdM.sum(axis=1)
    e_zl = np.zeros_like(gMR)
    e_yl = np.zeros_like(gMR)
    zmask = (e_z > 0) & (lam_r > 0)
    ymask = (censor == 1) & (e_y > 0) & (lam_d > 0)
    e_zl[zmask] = gMR[zmask] / lam_r[zmask, None] * e_z[zmask, None]
    e_yl[ymask] = gdM[ymask] / lam_d[ymask, None] * e_y[ymask, None]
    degenerate = int(np.sum((e_z > 0) & ~(lam_r > 0)) + np.sum((censor == 1) & (e_y > 0) & ~(lam_d > 0)))
    return e_zl, e_yl, degenerate


def e_step(params: ModelParams, data: IntervalData, design: Design, quad=None, phi=None) -> EStepCache:
    fam = params.fam
    UL, UR, _ = endpoint_risks(params, data, design, phi)
    c = data.censor
    e_eta = eta_mean(fam, c, UL, UR)
    e_z = z_mean(fam, c, UR)
    e_y = y_mean(fam, c, UL, UR, quad)
    e_zl, e_yl, degenerate = distribute(params.gamma, design.ML, design.MR, c, e_z, e_y)
    degenerate += int(np.sum((c == 0) & ~(UR > 0)) + np.sum((c == 1) & ~(UR > UL)))
    m_star = np.where(data.right[:, None], design.ML, design.MR)
    return EStepCache(e_eta, e_z, e_y, e_zl, e_yl, m_star, degenerate)


# per-subject spellings of the E-step quantities

def expect_eta(params: ModelParams, data: IntervalData, design=None) -> np.ndarray:
    UL, UR, _ = endpoint_risks(params, data, design)
    return eta_mean(params.fam, data.censor, UL, UR)


def expect_z(params: ModelParams, data: IntervalData, design=None) -> np.ndarray:
    _, UR, _ = endpoint_risks(params, data, design)
    return z_mean(params.fam, data.censor, UR)


def expect_y(params: ModelParams, data: IntervalData, quad=None, design=None) -> np.ndarray:
    UL, UR, _ = endpoint_risks(params, data, design)
    return y_mean(params.fam, data.censor, UL, UR, quad)


def distribute_expectations(params: ModelParams, data: IntervalData, e_z, e_y, design=None):
    if design is None:
        design = Design(data, params.basis)
    e_zl, e_yl, _ = distribute(params.gamma, design.ML, design.MR, data.censor, np.asarray(e_z), np.asarray(e_y))
    return e_zl, e_yl


# -- M-step pieces ---------------------------------------------------------

def q_value(beta, gamma, phi, cache: EStepCache, X) -> float:
    """Expected complete-data log-likelihood up to parameter-free terms."""
    lin = X @ beta + phi
    N = cache.counts
    with np.errstate(divide="ignore"):
        logg = np.where(N.sum(axis=0) > 0, np.log(gamma), 0.0)
    first = np.sum(N * (logg[None, :] + lin[:, None]))
    second = np.sum(np.exp(lin)[:, None] * gamma[None, :] * cache.exposure)
    return float(first - second)


def gamma_update(cache: EStepCache, X, beta, phi) -> np.ndarray:
    """Closed-form maximizer of ``Q`` in ``gamma`` at fixed ``beta`` and network."""
    num = cache.counts.sum(axis=0)
    den = np.exp(X @ beta + phi) @ cache.exposure
    gamma = np.zeros_like(num)
    ok = den > 0
    gamma[ok] = num[ok] / den[ok]
    if np.any(~ok & (num > 0)):
        log.warning("basis functions %s have no exposure; coefficients set to 0", np.flatnonzero(~ok & (num > 0)))
    return gamma


def q_new(beta, cache: EStepCache, X, phi) -> float:
    """``Q`` with ``gamma`` profiled out by its closed form (up to constants)."""
    N = cache.counts
    Nl = N.sum(axis=0)
    lin = X @ beta + phi
    S = np.exp(lin) @ cache.exposure
    used = Nl > 0
    return float(np.sum(lin * N.sum(axis=1)) - np.sum(Nl[used] * np.log(S[used])))


def q_new_grad(beta, cache: EStepCache, X, phi) -> np.ndarray:
    N = cache.counts
    Nl = N.sum(axis=0)
    used = Nl > 0
    e = np.exp(X @ beta + phi)
    D = cache.exposure[:, used]
    S = e @ D
    weighted = X.T @ (e[:, None] * D)
    return X.T @ N.sum(axis=1) - weighted @ (Nl[used] / S)


def _numeric_hessian(grad, beta, h=1e-5):
    p = beta.size
    H = np.empty((p, p))
    for j in range(p):
        step = h * (1.0 + abs(beta[j]))
        e = np.zeros(p)
        e[j] = step
        H[:, j] = (grad(beta + e) - grad(beta - e)) / (2 * step)
    return 0.5 * (H + H.T)


def beta_one_step(cache: EStepCache, X, phi, beta_old, max_halvings: int = 10) -> np.ndarray:
    """One damped Newton step on the profiled objective for ``beta``.

    Uses the analytic gradient and a central-difference Hessian; the
    step is halved until the objective does not decrease.  A Hessian that
    is singular or not negative definite falls back to a scaled gradient
    step under the same damping.
    """
    beta_old = np.asarray(beta_old, dtype=float)

    def grad(b):
        return q_new_grad(b, cache, X, phi)

    g = grad(beta_old)
    if np.max(np.abs(g)) < 1e-10:
        return beta_old.copy()
    H = _numeric_hessian(grad, beta_old)
    step = None
    try:
        if np.all(np.linalg.eigvalsh(H) < 0):
            step = np.linalg.solve(H, -g)
    except np.linalg.LinAlgError:
        step = None
    if step is None or not np.all(np.isfinite(step)):
        step = g / max(1.0, np.max(np.abs(np.diag(H))))
    q0 = q_new(beta_old, cache, X, phi)
    for _ in range(max_halvings + 1):
        cand = beta_old + step
        qc = q_new(cand, cache, X, phi)
        if np.isfinite(qc) and qc >= q0:
            return cand
        step = step / 2.0
    return beta_old.copy()


# -- driver ----------------------------------------------------------------

def phi_objective(phi, A, B) -> float:
    """``sum A*phi - sum(A) * log(sum B*exp(phi))``: the network part of Q
    maximized over a constant shift of ``phi``, hence invariant to recentering."""
    return float(A @ phi - A.sum() * logsumexp(phi, b=B))


def initial_params(data: IntervalData, config: EmConfig, rng, basis: Optional[SplineBasis] = None) -> ModelParams:
    if basis is None:
        basis = build_basis(data.finite_times(), config.degree, config.n_interior, config.knot_placement)
    net = None
    if config.net_config is not None:
        net_cfg = replace(config.net_config, widths=(data.d,) + config.net_config.widths[1:])
        net = init_net(net_cfg, rng)
        recenter(net, data.W)
    return ModelParams(
        beta=np.zeros(data.p),
        gamma=np.full(basis.n_basis, config.init_gamma),
        net=net,
        basis=basis,
        fam=TransformationFamily(config.r),
    )


def run_em(
    data: IntervalData,
    params: ModelParams,
    config: EmConfig,
    rng: np.random.Generator,
    update_beta: bool = True,
    train_net: bool = True,
    max_iters: Optional[int] = None,
) -> FitResult:
    """Iterate Steps 2-5 from ``params`` (modified in place) until the
    log-likelihood changes by less than ``config.tol``."""
    design = Design(data, params.basis)
    quad = None if params.fam.r == 0.0 else build_quadrature(params.fam, config.quad_order)
    X, W = data.X, data.W
    phi = params.phi(W)
    terms, floored = subject_loglik(params, data, design, phi)
    ll = float(np.sum(terms))
    if not np.isfinite(ll):
        raise NumericalFailure("initial log-likelihood is not finite", [ll])
    trace = [ll]
    degenerate = 0
    rejections = 0
    net_cfg = config.net_config
    converged = False
    max_iters = config.max_iters if max_iters is None else max_iters
    it = 0
    for it in range(1, max_iters + 1):
        cache = e_step(params, data, design, quad, phi)
        accepted = True
        degenerate += cache.degenerate
        if params.net is not None and train_net:
            A = cache.counts.sum(axis=1)
            B = np.exp(X @ params.beta) * (cache.exposure @ params.gamma)
            snapshot = params.net.copy()
            try:
                for _ in range(net_cfg.epochs_per_em_step):
                    train_epoch(params.net, W, A, B, net_cfg, rng)
                with np.errstate(over="ignore", invalid="ignore"):
                    accepted = phi_objective(params.net(W), A, B) >= phi_objective(phi, A, B)
            except FloatingPointError:
                accepted = False
            if accepted:
                recenter(params.net, W)
                phi = params.net(W)
            else:
                # generalized EM: keep the old network and take smaller steps from now on
                params.net = snapshot
                rejections += 1
                net_cfg = replace(net_cfg, learning_rate=net_cfg.learning_rate / 2.0)
        if update_beta:
            params.beta = beta_one_step(cache, X, phi, params.beta, config.beta_max_halvings)
        params.gamma = gamma_update(cache, X, params.beta, phi)
        terms, fl = subject_loglik(params, data, design, phi)
        floored += fl
        ll_new = float(np.sum(terms))
        trace.append(ll_new)
        if not np.isfinite(ll_new):
            raise NumericalFailure(f"log-likelihood became non-finite at iteration {it}", trace)
        if accepted and abs(ll_new - ll) < config.tol:
            converged = True
            break
        ll = ll_new
    return FitResult(params, trace, converged, it, floored, degenerate, rejections, config=config)


def fit(data: IntervalData, config: Optional[EmConfig] = None, seed: Optional[int] = 0,
        basis: Optional[SplineBasis] = None) -> FitResult:
    """Sieve maximum-likelihood fit by EM.

    All randomness (network initialization, batch shuffling, dropout)
    is drawn from one generator seeded by ``seed``.
    """
    config = EmConfig() if config is None else config
    if data.n == 0:
        raise ValueError("empty dataset")
    if np.all(data.right):
        raise ValueError("all subjects are right-censored; the model is not estimable")
    rng = np.random.default_rng(seed)
    params = initial_params(data, config, rng, basis)
    result = run_em(data, params, config, rng)
    result.seed = seed
    return result
