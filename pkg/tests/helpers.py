"""Straight-line numpy reimplementations used as oracles."""

import numpy as np


def np_mlp(params, stats, name, x, n_layers, batch_norm=True, final_activation=True):
    """Eval-mode MLP forward from raw parameter arrays."""
    for i in range(n_layers):
        x = x @ params[f"{name}/layer{i}/weight"]
        if f"{name}/layer{i}/bias" in params:
            x = x + params[f"{name}/layer{i}/bias"]
        if i == n_layers - 1 and not final_activation:
            break
        if batch_norm:
            s = stats[f"{name}/bn{i}"]
            x = (x - s.mean) / np.sqrt(s.var + s.eps)
            x = x * params[f"{name}/bn{i}/gamma"] + params[f"{name}/bn{i}/beta"]
        x = np.maximum(x, 0.0)
    return x


def np_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
