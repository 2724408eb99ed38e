"""Towers, attention transfer units, probability heads, funnel transfer."""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Graph
from .errors import ContractError, DimensionError
from .extraction import mix
from .nn import MLP, Linear


class Tower:
    """ReLU MLP producing the task representation; the last layer is affine."""

    def __init__(self, store, name, n_in, hidden, out_dim, bias=True):
        self.mlp = MLP(store, name, n_in, [*hidden, out_dim], batch_norm=False,
                       final_activation=False, bias=bias)
        self.out_dim = out_dim

    def __call__(self, g, v):
        return self.mlp(g, v)


class AttentionUnit:
    """Single-head scaled dot-product attention over [t^k] or [t^k, a^(k-1)].

    The output is read at the t^k position (``readout="position"``) or averaged
    over both positions (``readout="mean"``).
    """

    def __init__(self, store, name, dim, readout="position"):
        self.dim = dim
        self.readout = readout
        self.wq = Linear(store, f"{name}/wq", dim, dim, bias=False)
        self.wk = Linear(store, f"{name}/wk", dim, dim, bias=False)
        self.wv = Linear(store, f"{name}/wv", dim, dim, bias=False)

    def _row(self, g, q, keys, values):
        scale = 1.0 / math.sqrt(self.dim)
        scores = [g.scale(g.sum(g.mul(q, k), axis=-1, keepdims=True), scale) for k in keys]
        w = g.softmax(scores[0] if len(scores) == 1 else g.concat(scores))
        return mix(g, w, values), w

    def __call__(self, g: Graph, t, prev=None, trace=None):
        tokens = [t] if prev is None else [t, prev]
        for tok in tokens:
            if tok.shape[-1] != self.dim:
                raise DimensionError(f"attention: token width {tok.shape[-1]} != {self.dim}")
        qs = [self.wq(g, x) for x in tokens]
        ks = [self.wk(g, x) for x in tokens]
        vs = [self.wv(g, x) for x in tokens]
        out, w = self._row(g, qs[0], ks, vs)
        rows = [w.data]
        if self.readout == "mean" and prev is not None:
            other, w2 = self._row(g, qs[1], ks, vs)
            rows.append(w2.data)
            out = g.scale(g.add(out, other), 0.5)
        if trace is not None:
            trace.setdefault("attention_rows", []).extend(rows)
        return out


class ProbabilityHead:
    def __init__(self, store, name, n_in):
        self.linear = Linear(store, name, n_in, 1)

    def __call__(self, g, a):
        return g.sigmoid(self.linear(g, a))


def probability_transfer(p_ctr, p_avr, p_cvr):
    """Entire-space click, add-to-cart, purchase probabilities from the
    conditional stage probabilities."""
    ps = [np.asarray(p, dtype=np.float64) for p in (p_ctr, p_avr, p_cvr)]
    for p in ps:
        if np.any(p < 0) or np.any(p > 1):
            raise ContractError("probability_transfer: inputs must lie in [0, 1]")
    click = ps[0]
    atc = click * ps[1]
    return click, atc, atc * ps[2]


def transfer_graph(g: Graph, probs):
    """Tape version of :func:`probability_transfer` over K task tensors."""
    out = [probs[0]]
    for p in probs[1:]:
        out.append(g.mul(out[-1], p))
    return out
