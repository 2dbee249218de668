"""Feed-forward SeLU network for the nonlinear covariate effect.

Forward pass, exact backpropagation for the EM objective in the network
parameters, mini-batch SGD with an L1 penalty and inverted dropout, and
the mean-zero recentering that keeps the model identifiable.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

SELU_SCALE = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772

PHI_WARN_LEVEL = 20.0


class DivergenceError(FloatingPointError):
    """Raised when SGD produces non-finite gradients or outputs."""


def selu(x):
    x = np.asarray(x, dtype=float)
    return SELU_SCALE * np.where(x > 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0.0)))


def selu_deriv(x):
    x = np.asarray(x, dtype=float)
    return SELU_SCALE * np.where(x > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(x, 0.0)))


@dataclass
class NetConfig:
    """Architecture and SGD settings.

    ``widths`` runs input to output, e.g. ``(4, 50, 50, 1)``.  The batch
    loss is ``loss_scale * sum_i loss_i + l1_penalty * sum |weights|``
    where ``loss_scale`` is ``n / batch`` for ``"full"`` (an unbiased
    estimate of the full-sample objective), 1 for ``"sum"`` and
    ``1 / batch`` for ``"mean"``.
    """

    widths: tuple = (4, 50, 50, 1)
    l1_penalty: float = 0.01
    learning_rate: float = 1e-4
    batch_size: int = 50
    epochs_per_em_step: int = 20
    dropout_rate: float = 0.1
    loss_scale: str = "sum"

    def __post_init__(self):
        self.widths = tuple(int(h) for h in self.widths)
        if len(self.widths) < 3:
            raise ValueError("need at least one hidden layer")
        if self.widths[-1] != 1:
            raise ValueError("output width must be 1")
        if any(h < 1 for h in self.widths):
            raise ValueError("layer widths must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs_per_em_step < 1:
            raise ValueError("learning rate, batch size and epochs must be positive")
        if self.l1_penalty < 0:
            raise ValueError("l1 penalty must be nonnegative")
        if self.loss_scale not in ("full", "sum", "mean"):
            raise ValueError(f"unknown loss_scale {self.loss_scale!r}")

    @property
    def n_hidden(self) -> int:
        return len(self.widths) - 2


@dataclass
class NeuralNet:
    """Weights ``w[j]`` of shape ``(h_{j+1}, h_j)``, shifts ``v[j]``, and the
    centering offset subtracted from the raw output."""

    weights: list
    shifts: list
    offset: float = 0.0
    widths: tuple = field(init=False)

    def __post_init__(self):
        self.widths = tuple([self.weights[0].shape[1]] + [w.shape[0] for w in self.weights])
        for w, v in zip(self.weights, self.shifts):
            if v.shape != (w.shape[0],):
                raise ValueError("shift/weight shape mismatch")
        for w0, w1 in zip(self.weights[:-1], self.weights[1:]):
            if w1.shape[1] != w0.shape[0]:
                raise ValueError("weight shapes do not chain")

    def copy(self) -> "NeuralNet":
        return NeuralNet([w.copy() for w in self.weights], [v.copy() for v in self.shifts], float(self.offset))

    def raw(self, W):
        h = _as_input(W, self.widths[0])
        for w, v in zip(self.weights[:-1], self.shifts[:-1]):
            h = selu(h @ w.T + v)
        return (h @ self.weights[-1].T + self.shifts[-1])[:, 0]

    def __call__(self, W):
        """Centered output for each row of ``W`` (dropout off)."""
        return self.raw(W) - self.offset

    forward = __call__

    def to_flat(self) -> np.ndarray:
        parts = [np.ravel(a) for pair in zip(self.weights, self.shifts) for a in pair]
        return np.concatenate(parts + [np.array([self.offset])])

    @classmethod
    def from_flat(cls, widths, flat) -> "NeuralNet":
        flat = np.asarray(flat, dtype=float)
        weights, shifts = [], []
        pos = 0
        for h_in, h_out in zip(widths[:-1], widths[1:]):
            weights.append(flat[pos:pos + h_out * h_in].reshape(h_out, h_in).copy())
            pos += h_out * h_in
            shifts.append(flat[pos:pos + h_out].copy())
            pos += h_out
        if pos + 1 != flat.size:
            raise ValueError("flat parameter vector does not match widths")
        return cls(weights, shifts, float(flat[pos]))


def _as_input(W, d):
    W = np.asarray(W, dtype=float)
    if W.ndim == 1:
        W = W[None, :]
    if W.shape[1] != d:
        raise ValueError(f"expected {d} input features, got {W.shape[1]}")
    return W


def init_net(config: NetConfig, rng) -> NeuralNet:
    """Glorot-uniform weights, zero shifts, zero offset."""
    rng = np.random.default_rng(rng)
    weights, shifts = [], []
    for h_in, h_out in zip(config.widths[:-1], config.widths[1:]):
        bound = np.sqrt(6.0 / (h_in + h_out))
        weights.append(rng.uniform(-bound, bound, size=(h_out, h_in)))
        shifts.append(np.zeros(h_out))
    return NeuralNet(weights, shifts, 0.0)


def loss_and_grad(net: NeuralNet, W, A, B, l1=0.0, scale=1.0, masks=None):
    """Penalized loss ``scale * sum_i {B_i exp(phi_i) - A_i phi_i} + l1 * sum|w|``
    and its gradient with respect to every weight matrix and shift vector.

    ``masks`` (one per hidden layer, already divided by the keep
    probability) applies inverted dropout to hidden activations.
    """
    x = _as_input(W, net.widths[0])
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    pre, acts = [], [x]
    h = x
    for j, (w, v) in enumerate(zip(net.weights[:-1], net.shifts[:-1])):
        z = h @ w.T + v
        h = selu(z)
        if masks is not None:
            h = h * masks[j]
        pre.append(z)
        acts.append(h)
    phi = (h @ net.weights[-1].T + net.shifts[-1])[:, 0] - net.offset
    ephi = np.exp(phi)
    loss = scale * np.sum(B * ephi - A * phi) + l1 * sum(np.abs(w).sum() for w in net.weights)

    delta = (scale * (B * ephi - A))[:, None]
    gw = [None] * len(net.weights)
    gv = [None] * len(net.shifts)
    for j in range(len(net.weights) - 1, -1, -1):
        gw[j] = delta.T @ acts[j] + l1 * np.sign(net.weights[j])
        gv[j] = delta.sum(axis=0)
        if j > 0:
            back = delta @ net.weights[j]
            if masks is not None:
                back = back * masks[j - 1]
            delta = back * selu_deriv(pre[j - 1])
    return loss, gw, gv


def _loss_scale(config: NetConfig, n_total: int, n_batch: int) -> float:
    if config.loss_scale == "full":
        return n_total / n_batch
    if config.loss_scale == "mean":
        return 1.0 / n_batch
    return 1.0


def train_epoch(net: NeuralNet, W, A, B, config: NetConfig, rng) -> NeuralNet:
    """One epoch of mini-batch SGD on the EM objective; updates ``net`` in place."""
    W = _as_input(W, net.widths[0])
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if np.any(A < 0) or np.any(B < 0):
        raise ValueError("loss weights must be nonnegative")
    n = W.shape[0]
    order = rng.permutation(n)
    keep = 1.0 - config.dropout_rate
    for start in range(0, n, config.batch_size):
        idx = order[start:start + config.batch_size]
        masks = None
        if config.dropout_rate > 0:
            masks = [(rng.random((idx.size, h)) < keep) / keep for h in config.widths[1:-1]]
        scale = _loss_scale(config, n, idx.size)
        _, gw, gv = loss_and_grad(net, W[idx], A[idx], B[idx], config.l1_penalty, scale, masks)
        if not all(np.all(np.isfinite(g)) for g in gw + gv):
            raise DivergenceError("non-finite gradient in SGD; the learning rate is likely too large")
        for j in range(len(net.weights)):
            net.weights[j] -= config.learning_rate * gw[j]
            net.shifts[j] -= config.learning_rate * gv[j]
    return net


train_step = train_epoch


def recenter(net: NeuralNet, W_train):
    """Shift the offset so the training-sample mean output is zero.

    Returns the net and the mean that was subtracted.
    """
    out = net(W_train)
    mean = float(np.mean(out))
    net.offset += mean
    # second pass absorbs rounding left by the first
    resid = float(np.mean(net(W_train)))
    net.offset += resid
    peak = np.max(np.abs(out - mean))
    if not np.isfinite(peak):
        raise DivergenceError("network output is not finite")
    if peak > PHI_WARN_LEVEL:
        warnings.warn(f"|phi| reached {peak:.1f}; SGD may be diverging", RuntimeWarning, stacklevel=2)
    return net, mean + resid
