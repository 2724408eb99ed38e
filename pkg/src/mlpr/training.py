"""Training loop, early stopping, checkpoints, and batch inference."""

from __future__ import annotations

import copy
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as fd
from .autodiff import Graph, Tensor, checkpoint
from .config import RunConfig, dump_config
from .errors import NumericError
from .features import (
    FeatureTable,
    NormalizationStats,
    make_provider,
    select_encoder_seed,
    zscore_fit,
)
from .model import RankingModel
from .objective import Adam

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "L_click", "L_atc", "L_purchase", "total", "s1", "s2", "s3", "wall_ms")


def resolve_encoder_seed(cfg: RunConfig, train_records):
    """Encoder seed after the optional supervised seed refresh."""
    fcfg = cfg.features
    if not cfg.model.feature_refresh or fcfg.mode != "hash-encoder":
        return fcfg.encoder_seed, None
    cands = [fcfg.encoder_seed + i for i in range(fcfg.refresh_candidates)]
    best, scores = select_encoder_seed(train_records, fcfg.dim, cands,
                                       fd.label_matrix(train_records)[:, 0])
    log.info("feature refresh probe AUCs %s -> seed %d", scores, best)
    return best, scores


def build_tables(cfg: RunConfig, parts: dict, stats: NormalizationStats | None = None):
    """Feature tables for each named record list; stats fitted on ``parts['train']``."""
    if stats is None:
        stats = zscore_fit([r.features for r in parts["train"]], "train")
    qp, ip = make_provider(cfg.features)
    qcache, icache = {}, {}
    tables = {
        name: FeatureTable(recs, qp, ip, stats, qcache, icache) for name, recs in parts.items()
    }
    return tables, stats


@dataclass
class TrainResult:
    model: RankingModel
    stats: NormalizationStats
    config: RunConfig
    steps: int = 0
    epochs: int = 0
    best_val: float = float("nan")
    final_train_loss: float = float("nan")
    history: list = field(default_factory=list)
    refresh_scores: dict | None = None


def _weights(records, cfg):
    if not cfg.train.impression_weighting:
        return None
    return np.array([r.impressions for r in records], dtype=np.float64)[:, None]


def evaluate_loss(model, X, Y, w=None, batch_size=4096):
    """Eval-mode total loss and per-task losses, averaged over batches by size."""
    n = X.shape[0]
    tot, per = 0.0, np.zeros(3)
    for lo in range(0, n, batch_size):
        sl = slice(lo, lo + batch_size)
        g = Graph(record=False)
        out = model.forward(g, Tensor(X[sl]), mode="eval")
        total, losses = model.loss(g, out, Y[sl], None if w is None else w[sl])
        frac = (min(n, lo + batch_size) - lo) / n
        tot += total.item() * frac
        per += np.array([L.item() for L in losses]) * frac
    return tot, per


def save_checkpoint(path, model: RankingModel, stats: NormalizationStats):
    state = model.state_dict()
    state["features/zscore_mean"] = stats.mean
    state["features/zscore_std"] = stats.std
    checkpoint.save(path, state)


def load_model(ckpt_path, config_path=None):
    """Rebuild a model, its feature stats and config from a checkpoint pair."""
    from .config import load_config

    ckpt_path = Path(ckpt_path)
    config_path = Path(config_path) if config_path else ckpt_path.with_suffix(".json")
    cfg = load_config(config_path)
    state = checkpoint.load(ckpt_path)
    stats = NormalizationStats(state.pop("features/zscore_mean"),
                               state.pop("features/zscore_std"), "train")
    input_dim = 5 * cfg.features.dim + 1 + len(stats.mean)
    model = RankingModel(cfg.model, input_dim)
    model.load_state_dict(state)
    return model, stats, cfg


def train(cfg: RunConfig, parts: dict, out_dir=None, name="model", records_limit=None) -> TrainResult:
    """Train the configured variant on ``parts['train']``, early-stopping on ``parts['val']``.

    With ``out_dir`` set, writes ``<name>.ckpt``, ``<name>.json`` (effective
    config) and ``<name>.log.csv`` (one line per step).
    """
    cfg = copy.deepcopy(cfg)
    train_recs = parts["train"][:records_limit] if records_limit else parts["train"]
    seed, refresh_scores = resolve_encoder_seed(cfg, train_recs)
    cfg.features.encoder_seed = seed
    tables, stats = build_tables(cfg, {"train": train_recs, "val": parts.get("val", [])})
    tr, va = tables["train"], tables["val"]
    X = tr.rows()
    Y = fd.label_matrix(train_recs)
    W = _weights(train_recs, cfg)
    Xv = va.rows() if len(va) else None
    Yv = fd.label_matrix(parts.get("val", []))
    Wv = _weights(parts.get("val", []), cfg)

    model = RankingModel(cfg.model, X.shape[1])
    tc = cfg.train
    opt = Adam(model.params, tc.lr, tc.beta1, tc.beta2, tc.eps)
    shuffle_seq, drop_seq = np.random.SeedSequence(tc.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    drop_rng = np.random.default_rng(drop_seq)
    log.info("training %s: %d samples, input dim %d, config %s", name, X.shape[0], X.shape[1],
             json.dumps(cfg.to_dict()["train"], sort_keys=True))

    out_dir = Path(out_dir) if out_dir else None
    log_fh = None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / f"{name}.log.csv", "w", encoding="utf-8", newline="\n")
        log_fh.write(",".join(LOG_COLUMNS) + "\n")

    result = TrainResult(model, stats, cfg, refresh_scores=refresh_scores)
    best_state, best_val, bad_epochs = None, float("inf"), 0
    step = 0
    n = X.shape[0]
    try:
        for epoch in range(tc.epochs):
            order = shuffle_rng.permutation(n)
            for lo in range(0, n, tc.batch_size):
                idx = order[lo : lo + tc.batch_size]
                if len(idx) < 2:
                    continue  # batch norm needs two rows in train mode
                t0 = time.perf_counter()
                last_good = model.state_dict()
                g = Graph()
                model.store.zero_grad()
                try:
                    out = model.forward(g, Tensor(X[idx]), "train", drop_rng)
                    total, losses = model.loss(g, out, Y[idx], None if W is None else W[idx])
                    g.backward(total)
                    opt.step()
                except NumericError:
                    if out_dir:
                        model.load_state_dict(last_good)
                        save_checkpoint(out_dir / f"{name}.last_good.ckpt", model, stats)
                    raise
                step += 1
                result.final_train_loss = total.item()
                s = model.log_var.data if model.log_var is not None else None
                row = [step, *(L.item() for L in losses), total.item()]
                row += list(s) if s is not None else [float("nan")] * 3
                wall = (time.perf_counter() - t0) * 1e3
                if log_fh:
                    log_fh.write(",".join([str(step)] + [repr(float(v)) for v in row[1:]]
                                          + [f"{wall:.3f}"]) + "\n")
                result.history.append(row)
                if tc.max_steps and step >= tc.max_steps:
                    break
            result.epochs = epoch + 1
            if tc.max_steps and step >= tc.max_steps:
                break
            if Xv is not None and len(Xv):
                val, per = evaluate_loss(model, Xv, Yv, Wv)
                log.info("epoch %d step %d val total %.5f per-task %s", epoch + 1, step, val,
                         np.round(per, 5).tolist())
                if val < best_val - 1e-12:
                    best_val, best_state, bad_epochs = val, model.state_dict(), 0
                else:
                    bad_epochs += 1
                    if bad_epochs >= tc.patience:
                        log.info("early stop after epoch %d", epoch + 1)
                        break
    finally:
        if log_fh:
            log_fh.close()
    if best_state is not None:
        model.load_state_dict(best_state)
    result.steps = step
    result.best_val = best_val
    if out_dir:
        save_checkpoint(out_dir / f"{name}.ckpt", model, stats)
        dump_config(cfg, out_dir / f"{name}.json")
    return result


def overfit(cfg: RunConfig, records, n_samples=64):
    """Full-batch training on ``n_samples`` records; returns the final total loss."""
    recs = records[:n_samples]
    res = train(cfg, {"train": recs, "val": []})
    return res.final_train_loss, res
