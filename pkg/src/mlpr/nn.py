"""Small layer toolkit on top of the tape: named parameters, linear, MLP."""

from __future__ import annotations

import numpy as np

from .autodiff import Graph, RunningStats, Tensor
from .errors import ContractError, DimensionError


class ParameterStore:
    """Flat, ordered registry of trainable tensors and batch-norm buffers.

    Names are ``/``-separated paths; insertion order is creation order, which
    keeps checkpoints and optimizer state deterministic.
    """

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.params: dict[str, Tensor] = {}
        self.stats: dict[str, RunningStats] = {}

    def new(self, name, data):
        if name in self.params:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True, name=name)
        self.params[name] = t
        return t

    def new_stats(self, name, n, momentum=0.9, eps=1e-5):
        s = RunningStats(n, momentum, eps)
        self.stats[name] = s
        return s

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {name: p.data.copy() for name, p in self.params.items()}
        for name, s in self.stats.items():
            out[f"{name}/running_mean"] = s.mean.copy()
            out[f"{name}/running_var"] = s.var.copy()
        return out

    def load_state_dict(self, state: dict[str, np.ndarray], strict=True):
        expected = set(self.state_dict())
        missing = expected - set(state)
        if strict and missing:
            raise ContractError(f"checkpoint is missing tensors: {sorted(missing)[:5]}")
        for name, p in self.params.items():
            if name in state:
                if state[name].shape != p.data.shape:
                    raise DimensionError(
                        f"{name}: checkpoint shape {state[name].shape} != {p.data.shape}"
                    )
                p.data = np.array(state[name], dtype=np.float64)
        for name, s in self.stats.items():
            if f"{name}/running_mean" in state:
                s.mean = np.array(state[f"{name}/running_mean"], dtype=np.float64)
                s.var = np.array(state[f"{name}/running_var"], dtype=np.float64)


def glorot(rng, n_in, n_out):
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


class Linear:
    def __init__(self, store: ParameterStore, name, n_in, n_out, bias=True):
        self.n_in, self.n_out = n_in, n_out
        self.weight = store.new(f"{name}/weight", glorot(store.rng, n_in, n_out))
        self.bias = store.new(f"{name}/bias", np.zeros(n_out)) if bias else None

    def __call__(self, g: Graph, x):
        if x.shape[-1] != self.n_in:
            raise DimensionError(
                f"linear {self.weight.name}: expected {self.n_in} inputs, got shape {x.shape}"
            )
        y = g.matmul(x, self.weight)
        return g.add(y, self.bias) if self.bias is not None else y


class MLP:
    """Linear -> [batch norm] -> ReLU -> [dropout] per hidden layer.

    ``final_activation=False`` leaves the last layer affine (used by towers).
    """

    def __init__(self, store, name, n_in, hidden, batch_norm=True, dropout=0.0,
                 final_activation=True, bias=True):
        if not hidden:
            raise ContractError(f"{name}: MLP needs at least one layer")
        self.layers = []
        self.norms = []
        self.batch_norm = batch_norm
        self.dropout = dropout
        self.final_activation = final_activation
        dims = [n_in, *hidden]
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            self.layers.append(Linear(store, f"{name}/layer{i}", a, b, bias=bias))
            if batch_norm:
                self.norms.append((
                    store.new(f"{name}/bn{i}/gamma", np.ones(b)),
                    store.new(f"{name}/bn{i}/beta", np.zeros(b)),
                    store.new_stats(f"{name}/bn{i}", b),
                ))
        self.out_dim = dims[-1]

    def __call__(self, g: Graph, x, mode="train", rng=None):
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(g, x)
            if i == last and not self.final_activation:
                break
            if self.batch_norm:
                gamma, beta, stats = self.norms[i]
                x = g.batchnorm(x, gamma, beta, stats, mode=mode)
            x = g.relu(x)
            if self.dropout > 0:
                x = g.dropout(x, self.dropout, mode=mode, rng=rng)
        return x
