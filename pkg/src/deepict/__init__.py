"""Sieve maximum-likelihood estimation of partially linear transformation
models for interval-censored data, with the nonlinear covariate effect
fitted by a feed-forward network inside an EM algorithm."""

from .dnn import NetConfig, NeuralNet, init_net, loss_and_grad, recenter, selu, train_epoch
from .em import EmConfig, FitResult, NumericalFailure, e_step, fit, gamma_update, run_em
from .inference import CovarianceResult, covariance, profile_refit
from .likelihood import (Censor, IntervalData, ModelParams, Observation, distribution_fn, loglik, risk_cumhaz,
                         subject_loglik, survival_fn, survival_matrix)
from .metrics import MetricReport, ibs, mse_survival, relative_error
from .simulate import SimConfig, SimDataset, generate, phi_case
from .splines import SplineBasis, build_basis
from .transform import QuadratureRule, TransformationFamily, build_quadrature

__version__ = "0.1.0"
