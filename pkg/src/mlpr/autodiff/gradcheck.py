"""Central-difference verification of the op rules."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .graph import Graph, Tensor
from .ops import OPS, RunningStats


def _fresh(attrs):
    return attrs() if callable(attrs) else dict(attrs or {})


def grad_check(
    op_kind: str,
    sample_point,
    h: float = 1e-5,
    attrs: dict | Callable[[], dict] | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    The op output is reduced to a scalar with a fixed random projection so
    every output entry contributes. ``attrs`` may be a factory when the op
    carries state (dropout generator, batch-norm buffers) that must be rebuilt
    for each evaluation. Error per entry is ``|a - n| / max(1, |n|)``.
    """
    if not h > 0:
        raise ValueError("step size must be positive")
    if isinstance(sample_point, np.ndarray) or np.isscalar(sample_point):
        sample_point = [sample_point]
    points = [np.array(p, dtype=np.float64) for p in sample_point]
    op = OPS[op_kind]

    def scalar(arrays):
        out, _ = op.forward([a.copy() for a in arrays], **_fresh(attrs))
        return float(np.sum(out * proj))

    out0, _ = op.forward([p.copy() for p in points], **_fresh(attrs))
    proj = np.random.default_rng(seed).standard_normal(np.shape(out0))

    g = Graph()
    xs = [Tensor(p, requires_grad=True) for p in points]
    y = g.forward(op_kind, *xs, **_fresh(attrs))
    loss = g.sum(g.mul(y, proj))
    g.backward(loss)

    worst = 0.0
    for i, p in enumerate(points):
        flat = p.reshape(-1)
        analytic = xs[i].grad.reshape(-1)
        for j in range(flat.size):
            plus = [q.copy() for q in points]
            minus = [q.copy() for q in points]
            plus[i].reshape(-1)[j] += h
            minus[i].reshape(-1)[j] -= h
            numeric = (scalar(plus) - scalar(minus)) / (2 * h)
            err = abs(analytic[j] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst


def random_sample(op_kind: str, rng: np.random.Generator):
    """A generic random operating point (inputs, attrs) for ``op_kind``.

    Points are kept away from the non-differentiable sets of relu and clip.
    """
    n = rng.standard_normal

    def away_from(x, edges, gap=1e-2):
        for e in edges:
            close = np.abs(x - e) < gap
            x[close] = e + np.sign(x[close] - e + 1e-300) * gap * 2
        return x

    if op_kind == "matmul":
        return [n((2, 3)), n((3, 2))], None
    if op_kind in ("add", "sub", "mul"):
        return [n((3, 4)), n((1, 4))], None
    if op_kind == "scale":
        return [n((3, 2))], {"factor": -1.7, "shift": 0.4}
    if op_kind == "concat":
        return [n((3, 2)), n((3, 4))], {"axis": -1}
    if op_kind == "slice":
        return [n((3, 5))], {"start": 1, "stop": 4}
    if op_kind == "relu":
        return [away_from(n((4, 3)), [0.0])], None
    if op_kind in ("sigmoid", "softmax", "exp"):
        return [n((3, 4))], None
    if op_kind == "log":
        return [rng.uniform(0.2, 3.0, (3, 4))], None
    if op_kind == "clip":
        return [away_from(n((4, 3)), [-0.5, 0.5])], {"lo": -0.5, "hi": 0.5}
    if op_kind == "sum":
        return [n((3, 4))], {"axis": -1, "keepdims": True}
    if op_kind == "mean":
        return [n((3, 4))], None
    if op_kind == "batchnorm":
        stats = RunningStats(3)
        return [n((6, 3)), 1.0 + 0.3 * n(3), n(3)], lambda: {
            "stats": stats.copy(),
            "mode": "train",
        }
    if op_kind == "dropout":
        dseed = int(rng.integers(2**31))
        return [n((4, 5))], lambda: {
            "ratio": 0.3,
            "mode": "train",
            "rng": np.random.default_rng(dseed),
        }
    raise KeyError(op_kind)


def check_all_ops(n_points: int = 10, h: float = 1e-5, seed: int = 0,
                  ops: Sequence[str] | None = None) -> dict[str, float]:
    """Worst grad_check error per registered op over ``n_points`` random points."""
    rng = np.random.default_rng(seed)
    report = {}
    for name in ops or sorted(OPS):
        worst = 0.0
        for k in range(n_points):
            inputs, attrs = random_sample(name, rng)
            worst = max(worst, grad_check(name, inputs, h=h, attrs=attrs, seed=seed + k))
        report[name] = worst
    return report
