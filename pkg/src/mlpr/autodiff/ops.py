"""Forward/backward rules for the op set used by the ranking model.

Every rule is an :class:`Op` holding a pure ``forward(arrays, **attrs) ->
(out, ctx)`` and ``backward(ctx, grad_out) -> grads`` pair. Rules live in the
``OPS`` registry so the gradient checker and the graph share one definition.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import ContractError, DimensionError


@dataclass
class Op:
    name: str
    forward: Callable
    backward: Callable


OPS: dict[str, Op] = {}


def register(name):
    def wrap(cls):
        OPS[name] = Op(name, cls.forward, cls.backward)
        return cls

    return wrap


def unbroadcast(grad, shape):
    """Sum ``grad`` over the axes that broadcasting expanded to reach ``shape``."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


@register("matmul")
class _MatMul:
    @staticmethod
    def forward(xs):
        a, b = xs
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
        return a @ b, (a, b)

    @staticmethod
    def backward(ctx, g):
        a, b = ctx
        return g @ b.T, a.T @ g


@register("add")
class _Add:
    @staticmethod
    def forward(xs):
        a, b = xs
        _broadcast_shape("add", a, b)
        return a + b, (a.shape, b.shape)

    @staticmethod
    def backward(ctx, g):
        sa, sb = ctx
        return unbroadcast(g, sa), unbroadcast(g, sb)


@register("sub")
class _Sub:
    @staticmethod
    def forward(xs):
        a, b = xs
        _broadcast_shape("sub", a, b)
        return a - b, (a.shape, b.shape)

    @staticmethod
    def backward(ctx, g):
        sa, sb = ctx
        return unbroadcast(g, sa), unbroadcast(-g, sb)


@register("mul")
class _Mul:
    @staticmethod
    def forward(xs):
        a, b = xs
        _broadcast_shape("mul", a, b)
        return a * b, (a, b)

    @staticmethod
    def backward(ctx, g):
        a, b = ctx
        return unbroadcast(g * b, a.shape), unbroadcast(g * a, b.shape)


@register("scale")
class _Scale:
    """``factor * x + shift`` with constant factor and shift."""

    @staticmethod
    def forward(xs, factor=1.0, shift=0.0):
        (x,) = xs
        return factor * x + shift, factor

    @staticmethod
    def backward(ctx, g):
        return (ctx * g,)


@register("concat")
class _Concat:
    @staticmethod
    def forward(xs, axis=-1):
        ref = xs[0]
        ax = axis % ref.ndim
        for x in xs[1:]:
            if x.ndim != ref.ndim or any(
                x.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
            ):
                raise DimensionError(
                    f"concat: shapes {[x.shape for x in xs]} disagree off axis {axis}"
                )
        sizes = [x.shape[ax] for x in xs]
        return np.concatenate(xs, axis=ax), (ax, np.cumsum(sizes)[:-1])

    @staticmethod
    def backward(ctx, g):
        ax, cuts = ctx
        return tuple(np.split(g, cuts, axis=ax))


@register("slice")
class _Slice:
    """Columns ``start:stop`` of the last axis."""

    @staticmethod
    def forward(xs, start=0, stop=None):
        (x,) = xs
        stop = x.shape[-1] if stop is None else stop
        if not 0 <= start < stop <= x.shape[-1]:
            raise DimensionError(f"slice: [{start}:{stop}] out of range for shape {x.shape}")
        return x[..., start:stop].copy(), (x.shape, start, stop)

    @staticmethod
    def backward(ctx, g):
        shape, start, stop = ctx
        out = np.zeros(shape)
        out[..., start:stop] = g
        return (out,)


@register("relu")
class _Relu:
    @staticmethod
    def forward(xs):
        (x,) = xs
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    @staticmethod
    def backward(ctx, g):
        # subgradient at exactly 0 is 0
        return (g * ctx,)


@register("sigmoid")
class _Sigmoid:
    @staticmethod
    def forward(xs):
        (x,) = xs
        y = np.empty_like(x)
        pos = x >= 0
        y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        y[~pos] = ex / (1.0 + ex)
        return y, y

    @staticmethod
    def backward(ctx, g):
        y = ctx
        return (g * y * (1.0 - y),)


@register("softmax")
class _Softmax:
    @staticmethod
    def forward(xs):
        (x,) = xs
        z = np.exp(x - x.max(axis=-1, keepdims=True))
        y = z / z.sum(axis=-1, keepdims=True)
        return y, y

    @staticmethod
    def backward(ctx, g):
        y = ctx
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)


@register("exp")
class _Exp:
    @staticmethod
    def forward(xs):
        (x,) = xs
        with np.errstate(over="ignore"):  # overflow surfaces as a NumericError
            y = np.exp(x)
        return y, y

    @staticmethod
    def backward(ctx, g):
        return (g * ctx,)


@register("log")
class _Log:
    @staticmethod
    def forward(xs):
        (x,) = xs
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(x), x

    @staticmethod
    def backward(ctx, g):
        return (g / ctx,)


@register("clip")
class _Clip:
    @staticmethod
    def forward(xs, lo=-np.inf, hi=np.inf):
        (x,) = xs
        inside = (x >= lo) & (x <= hi)
        return np.clip(x, lo, hi), inside

    @staticmethod
    def backward(ctx, g):
        return (g * ctx,)


@register("sum")
class _Sum:
    @staticmethod
    def forward(xs, axis=None, keepdims=False):
        (x,) = xs
        return x.sum(axis=axis, keepdims=keepdims), (x.shape, axis, keepdims)

    @staticmethod
    def backward(ctx, g):
        shape, axis, keepdims = ctx
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)


@register("mean")
class _Mean:
    @staticmethod
    def forward(xs, axis=None, keepdims=False):
        (x,) = xs
        n = x.size if axis is None else x.shape[axis]
        return x.mean(axis=axis, keepdims=keepdims), (x.shape, axis, keepdims, n)

    @staticmethod
    def backward(ctx, g):
        shape, axis, keepdims, n = ctx
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).copy(),)


class RunningStats:
    """Mutable running mean/variance buffers for one batch-norm layer."""

    def __init__(self, n_features, momentum=0.9, eps=1e-5):
        self.mean = np.zeros(n_features)
        self.var = np.ones(n_features)
        self.momentum = momentum
        self.eps = eps

    def copy(self):
        other = RunningStats(len(self.mean), self.momentum, self.eps)
        other.mean = self.mean.copy()
        other.var = self.var.copy()
        return other


@register("batchnorm")
class _BatchNorm:
    """Inputs ``(x, gamma, beta)``; ``x`` is batch x features.

    Train mode normalizes with the population batch variance and folds the
    unbiased variance into the running buffers (so a batch of one is rejected).
    """

    @staticmethod
    def forward(xs, stats: RunningStats, mode="train"):
        x, gamma, beta = xs
        if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
            raise DimensionError(
                f"batchnorm: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}"
            )
        if len(stats.mean) != x.shape[1]:
            raise DimensionError(
                f"batchnorm: running stats have {len(stats.mean)} features, x has {x.shape[1]}"
            )
        if mode == "train":
            n = x.shape[0]
            if n < 2:
                raise ContractError("batchnorm: train mode needs batch size >= 2")
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            m = stats.momentum
            stats.mean = m * stats.mean + (1 - m) * mu
            stats.var = m * stats.var + (1 - m) * var * n / (n - 1)
        elif mode == "eval":
            mu, var = stats.mean, stats.var
        else:
            raise ContractError(f"batchnorm: unknown mode {mode!r}")
        inv_std = 1.0 / np.sqrt(var + stats.eps)
        xhat = (x - mu) * inv_std
        return gamma * xhat + beta, (xhat, inv_std, gamma, mode)

    @staticmethod
    def backward(ctx, g):
        xhat, inv_std, gamma, mode = ctx
        dgamma = (g * xhat).sum(axis=0)
        dbeta = g.sum(axis=0)
        dxhat = g * gamma
        if mode == "eval":
            return dxhat * inv_std, dgamma, dbeta
        n = g.shape[0]
        dx = (inv_std / n) * (
            n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
        )
        return dx, dgamma, dbeta


@register("dropout")
class _Dropout:
    """Inverted dropout; eval mode and ratio 0 are the identity."""

    @staticmethod
    def forward(xs, ratio=0.0, mode="train", rng=None):
        (x,) = xs
        if not 0.0 <= ratio < 1.0:
            raise ContractError(f"dropout: ratio must be in [0, 1), got {ratio}")
        if mode == "eval" or ratio == 0.0:
            return x.copy(), None
        if rng is None:
            raise ContractError("dropout: train mode needs a seeded generator")
        keep = (rng.random(x.shape) >= ratio) / (1.0 - ratio)
        return x * keep, keep

    @staticmethod
    def backward(ctx, g):
        return (g.copy() if ctx is None else g * ctx,)
