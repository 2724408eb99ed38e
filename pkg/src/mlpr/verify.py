"""Gradient verification: per-op checks plus an end-to-end tiny model."""

from __future__ import annotations

import time

import numpy as np

from . import data as fd
from .autodiff import Graph, Tensor, check_all_ops
from .config import RunConfig, preset
from .model import RankingModel
from .training import build_tables

OP_TOLERANCE = 1e-4
MODEL_TOLERANCE = 1e-3


def tiny_batch(cfg: RunConfig, n=4):
    recs = fd.generate(cfg.data.funnel)[:n]
    tables, _ = build_tables(cfg, {"train": recs})
    return tables["train"].rows(), fd.label_matrix(recs)


def model_grad_check(cfg: RunConfig | None = None, h=1e-5, dropout_seed=7):
    """Max relative error of every parameter gradient of the full loss.

    Dropout masks are redrawn from the same seed on every evaluation so the
    loss is a fixed smooth function of the parameters.
    """
    cfg = cfg or preset("tiny")
    X, Y = tiny_batch(cfg, cfg.train.batch_size)
    model = RankingModel(cfg.model, X.shape[1])

    def loss_value(record):
        g = Graph(record=record)
        out = model.forward(g, Tensor(X), "train", np.random.default_rng(dropout_seed))
        total, _ = model.loss(g, out, Y)
        return g, total

    model.store.zero_grad()
    g, total = loss_value(True)
    g.backward(total)
    worst, worst_name = 0.0, None
    for name, p in model.params.items():
        analytic = p.grad.reshape(-1).copy()
        flat = p.data.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = loss_value(False)[1].item()
            flat[j] = orig - h
            down = loss_value(False)[1].item()
            flat[j] = orig
            numeric = (up - down) / (2 * h)
            err = abs(analytic[j] - numeric) / max(1.0, abs(numeric))
            if err > worst:
                worst, worst_name = err, name
    return worst, worst_name


def run_gradcheck(n_points=10, h=1e-5, seed=0, cfg=None):
    """Report rows ``(check, max_error, tolerance, passed)`` and overall status."""
    t0 = time.perf_counter()
    rows = []
    for op, err in check_all_ops(n_points=n_points, h=h, seed=seed).items():
        rows.append({"check": f"op:{op}", "max_rel_error": float(err),
                     "tolerance": OP_TOLERANCE, "passed": bool(err < OP_TOLERANCE)})
    err, where = model_grad_check(cfg, h=h)
    rows.append({"check": "model:tiny", "max_rel_error": float(err),
                 "tolerance": MODEL_TOLERANCE, "passed": bool(err < MODEL_TOLERANCE),
                 "worst_param": where})
    elapsed = time.perf_counter() - t0
    return rows, all(r["passed"] for r in rows), elapsed
