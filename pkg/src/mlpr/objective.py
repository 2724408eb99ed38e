"""Task losses, their fixed or uncertainty-weighted combination, and Adam."""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Graph, Tensor
from .errors import ContractError, DimensionError, NumericError

CLAMP = 1e-12


def bce_loss(g: Graph, yhat: Tensor, y, sample_weight=None):
    """Mean binary cross-entropy with predictions clamped to [1e-12, 1 - 1e-12]."""
    y = np.asarray(y, dtype=np.float64).reshape(yhat.shape)
    if not np.all((y == 0) | (y == 1)):
        raise ContractError("bce_loss: labels must be 0 or 1")
    p = g.clip(yhat, CLAMP, 1.0 - CLAMP)
    ll = g.add(g.mul(g.log(p), y), g.mul(g.log(g.scale(p, -1.0, 1.0)), 1.0 - y))
    if sample_weight is None:
        return g.scale(g.mean(ll), -1.0)
    w = np.asarray(sample_weight, dtype=np.float64).reshape(yhat.shape)
    return g.scale(g.sum(g.mul(ll, w)), -1.0 / float(w.sum()))


def combine_fixed(g: Graph, losses, weights):
    if len(weights) != len(losses):
        raise DimensionError(f"combine_fixed: {len(losses)} losses, {len(weights)} weights")
    total = None
    for L, w in zip(losses, weights):
        term = g.scale(L, float(w))
        total = term if total is None else g.add(total, term)
    return total


def combine_uncertainty(g: Graph, losses, log_var: Tensor):
    """sum_k exp(-s_k)/2 * L_k + s_k/2 with s_k = log sigma_k^2."""
    if log_var.shape != (len(losses),):
        raise DimensionError(f"combine_uncertainty: s has shape {log_var.shape}")
    total = None
    for k, L in enumerate(losses):
        s_k = g.slice(log_var, k, k + 1)
        precision = g.exp(g.scale(s_k, -1.0))
        term = g.add(g.scale(g.mul(precision, L), 0.5), g.scale(s_k, 0.5))
        total = term if total is None else g.add(total, term)
    return g.sum(total)


def uncertainty_sigma_form(losses, sigmas):
    """Reference value in the sigma parameterization (no tape)."""
    return sum(L / (2.0 * s * s) for L, s in zip(losses, sigmas)) + math.log(
        float(np.prod(sigmas))
    )


class Adam:
    """Bias-corrected adaptive-moment updates over named parameters."""

    def __init__(self, params: dict[str, Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray] | None = None):
        if grads is None:
            grads = {k: p.grad for k, p in self.params.items()}
        for name, grad in grads.items():
            if grad is not None and not np.all(np.isfinite(grad)):
                raise NumericError(f"non-finite gradient for parameter {name}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            grad = grads.get(name)
            if grad is None:
                continue
            m = self.m[name] = b1 * self.m[name] + (1 - b1) * grad
            v = self.v[name] = b2 * self.v[name] + (1 - b2) * grad * grad
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self):
        return {"t": self.t, "m": self.m, "v": self.v}
