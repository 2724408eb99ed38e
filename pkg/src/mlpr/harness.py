"""Experiment commands behind the CLI: gen-data, train, eval, ablate,
bench-latency, gradcheck. Each writes its artifacts plus a run manifest."""

from __future__ import annotations

import gc
import hashlib
import json
import logging
import os
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import data as fd
from .autodiff import Graph, Tensor
from .config import TOGGLES, RunConfig, dump_config
from .errors import ContractError, MLPRError
from .features import (
    FeatureTable,
    assemble_rows,
    encode_item,
    encode_query,
    item_of,
    make_provider,
    query_of,
    zscore_apply,
)
from .metrics import p99
from .plotting import plot_ablation, plot_latency, plot_metrics, plot_training
from .reporting import (
    METRIC_COLUMNS,
    TTEST_COLUMNS,
    evaluate_scores,
    percentile_groups,
    ttest_rows,
    write_csv,
    write_metrics,
)
from .training import load_model, train
from .verify import run_gradcheck

log = logging.getLogger(__name__)

SPLIT_FILES = {"train": "train.tsv", "val": "val.tsv", "test": "test.tsv"}


@dataclass
class RunManifest:
    command: str
    config: dict
    dataset_hash: str | None = None
    checkpoint: str | None = None
    metrics: str | None = None
    artifacts: dict = field(default_factory=dict)
    wall_seconds: float = 0.0

    def write(self, out_dir, filename=None):
        path = Path(out_dir) / (filename or f"manifest.{self.command}.json")
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
        return path


def sha256(path):
    return fd.file_sha256(path)


def dataset_hash(data_dir):
    h = hashlib.sha256()
    for name in ("train", "val", "test"):
        h.update(sha256(Path(data_dir) / SPLIT_FILES[name]).encode())
    return h.hexdigest()


def load_splits(data_dir):
    data_dir = Path(data_dir)
    return {name: fd.load_tsv(data_dir / fn) for name, fn in SPLIT_FILES.items()}


# -- gen-data ---------------------------------------------------------------

def cmd_gen_data(cfg: RunConfig, out):
    t0 = time.perf_counter()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    raw = fd.generate(cfg.data.funnel)
    kept = fd.filter_min_impressions(raw, cfg.data.min_impressions)
    parts = fd.split(kept, cfg.data.fractions, cfg.data.split_seed, cfg.data.by_query)
    paths = {}
    for name, recs in parts.parts().items():
        paths[name] = out / SPLIT_FILES[name]
        fd.save_tsv(recs, paths[name])
    stats = {"generated": fd.summary(raw), "kept": fd.summary(kept),
             **{name: fd.summary(recs) for name, recs in parts.parts().items()}}
    print(f"{'set':<10}{'queries':>10}{'items':>10}{'pairs':>10}{'impressions':>14}")
    for name, s in stats.items():
        print(f"{name:<10}{s['queries']:>10}{s['items']:>10}{s['pairs']:>10}{s['impressions']:>14}")
    dump_config(cfg, out / "data_config.json")
    man = RunManifest("gen-data", cfg.to_dict(), dataset_hash(out),
                      artifacts={k: str(v) for k, v in paths.items()},
                      wall_seconds=time.perf_counter() - t0)
    man.artifacts["summary"] = stats
    man.write(out)
    return paths, stats


# -- train ------------------------------------------------------------------

def cmd_train(cfg: RunConfig, data_dir, out, name="model"):
    t0 = time.perf_counter()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    parts = load_splits(data_dir)
    result = train(cfg, parts, out, name=name)
    plot_training(result.history, out / f"{name}.loss.png")
    man = RunManifest("train", result.config.to_dict(), dataset_hash(data_dir),
                      checkpoint=str(out / f"{name}.ckpt"),
                      artifacts={"log": str(out / f"{name}.log.csv"),
                                 "config": str(out / f"{name}.json"),
                                 "figure": str(out / f"{name}.loss.png"),
                                 "steps": result.steps, "epochs": result.epochs,
                                 "best_val_loss": result.best_val},
                      wall_seconds=time.perf_counter() - t0)
    man.write(out, f"{name}.manifest.json")
    return result


# -- eval -------------------------------------------------------------------

def scores_for(model, cfg, stats, records):
    qp, ip = make_provider(cfg.features)
    table = FeatureTable(records, qp, ip, stats)
    return model.predict(table.rows())


def baseline_scores(records, kind, seed=0):
    if kind == "oracle":
        return fd.truth_matrix(records)
    if kind == "random":
        return np.random.default_rng(seed).random((len(records), 3))
    raise ContractError(f"unknown baseline {kind!r}")


def cmd_eval(checkpoints: dict, data_dir, out, by_percentile=False, baselines=(), seed=0):
    """Metrics for each named checkpoint (and optional oracle/random baselines)."""
    t0 = time.perf_counter()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    test = fd.load_tsv(Path(data_dir) / SPLIT_FILES["test"])
    all_scores = {}
    for name, ckpt in checkpoints.items():
        model, stats, cfg = load_model(ckpt)
        all_scores[name] = scores_for(model, cfg, stats, test)
    for kind in baselines:
        all_scores[kind] = baseline_scores(test, kind, seed)

    rows, per_query = [], {}
    for name, sc in all_scores.items():
        r, pq = evaluate_scores(name, test, sc)
        rows += r
        per_query[name] = pq
    metrics_path = out / "metrics.csv"
    write_metrics(metrics_path, rows)
    write_csv(out / "ttest.csv", ttest_rows(per_query), TTEST_COLUMNS)
    plot_metrics(rows, out / "metrics.png")
    artifacts = {"ttest": str(out / "ttest.csv"), "figure": str(out / "metrics.png")}
    if by_percentile:
        group_rows = []
        for label, idx in percentile_groups(test).items():
            sub = [test[j] for j in idx]
            for name, sc in all_scores.items():
                r, _ = evaluate_scores(name, sub, sc[idx])
                group_rows += [{**x, "group": label} for x in r]
        write_csv(out / "metrics_by_percentile.csv", group_rows, (*METRIC_COLUMNS, "group"))
        artifacts["by_percentile"] = str(out / "metrics_by_percentile.csv")
    man = RunManifest("eval", {"checkpoints": {k: str(v) for k, v in checkpoints.items()},
                               "baselines": list(baselines), "seed": seed},
                      dataset_hash(data_dir), metrics=str(metrics_path), artifacts=artifacts,
                      wall_seconds=time.perf_counter() - t0)
    man.write(out)
    return rows


# -- ablate -----------------------------------------------------------------

ABLATION_STEPS = (
    ("mlp_mtl", None),
    ("+uncertainty_loss", "uncertainty_loss"),
    ("+specific_experts", "specific_experts"),
    ("+attention_units", "attention_units"),
    ("+probability_transfer", "probability_transfer"),
    ("+feature_refresh", "feature_refresh"),
)
ABLATION_COLUMNS = ("variant_index", "model_variant", "toggle", "task", "metric", "k", "value",
                    "delta", "n_queries", "n_skipped", "note")


def ablation_configs(cfg: RunConfig):
    """Six configs, each differing from the previous one by a single toggle."""
    off = {t: False for t in TOGGLES}
    cur = cfg.with_model(**off)
    out = []
    for label, toggle in ABLATION_STEPS:
        if toggle:
            cur = cur.with_model(**{toggle: True})
        out.append((label, toggle, cur))
    return out


def cmd_ablate(cfg: RunConfig, data_dir, out):
    t0 = time.perf_counter()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    parts = load_splits(data_dir)
    test = parts["test"]
    rows, metric_rows, prev = [], [], None
    for i, (label, toggle, vcfg) in enumerate(ablation_configs(cfg)):
        note = "non-faithful stand-in for encoder fine-tuning" if toggle == "feature_refresh" else ""
        try:
            res = train(vcfg, parts, out / "variants", name=f"v{i}")
            sc = scores_for(res.model, res.config, res.stats, test)
            r, _ = evaluate_scores(label, test, sc)
        except MLPRError as exc:
            log.error("variant %s failed: %s", label, exc)
            r = [dict(model_variant=label, task=t, metric=m, k=k, value=float("nan"),
                      n_queries=0, n_skipped=0)
                 for t in fd.TASKS for m, k in (("auc", ""), ("ndcg", 1), ("ndcg", 5))]
            note = f"failed: {exc}"
        metric_rows += r
        for j, row in enumerate(r):
            delta = row["value"] - prev[j]["value"] if prev else float("nan")
            rows.append({"variant_index": i, "toggle": toggle or "", "delta": delta,
                         "note": note, **row})
        prev = r
    write_csv(out / "ablation.csv", rows, ABLATION_COLUMNS)
    write_metrics(out / "metrics.csv", metric_rows)
    plot_ablation(metric_rows, out / "ablation.png")
    man = RunManifest("ablate", cfg.to_dict(), dataset_hash(data_dir),
                      metrics=str(out / "metrics.csv"),
                      artifacts={"ablation": str(out / "ablation.csv"),
                                 "figure": str(out / "ablation.png")},
                      wall_seconds=time.perf_counter() - t0)
    man.write(out)
    return rows


# -- bench-latency ----------------------------------------------------------

def candidate_lists(parts, n_queries, n_candidates):
    """First ``n_candidates`` records (any split) for each of ``n_queries`` test queries."""
    by_query = {}
    for name in ("train", "val", "test"):
        for r in parts[name]:
            by_query.setdefault(r.query_id, []).append(r)
    test_queries = sorted({r.query_id for r in parts["test"]})
    eligible = [q for q in test_queries if len(by_query[q]) >= n_candidates]
    if len(eligible) < n_queries:
        raise ContractError(
            f"bench needs {n_queries} test queries with >= {n_candidates} candidates, "
            f"found {len(eligible)}"
        )
    return [(q, sorted(by_query[q], key=lambda r: r.item_id)[:n_candidates])
            for q in eligible[:n_queries]]


def rank_candidates(model, qp, ip, stats, cands, item_cache=None, rank_task=2):
    """Encode, assemble, score and sort one candidate list; returns item ids."""
    mu_q = encode_query(qp, query_of(cands[0]))
    if item_cache is None:
        I = np.array([encode_item(ip, item_of(r)) for r in cands])
    else:
        I = np.array([item_cache[r.item_id] for r in cands])
    Q = np.broadcast_to(mu_q, I.shape)
    R = zscore_apply(stats, np.array([r.features for r in cands]))
    X = assemble_rows(Q, I, R)
    g = Graph(record=False)
    scores = model.forward(g, Tensor(X), mode="eval").numpy()[:, rank_task]
    order = sorted(range(len(cands)), key=lambda j: (-scores[j], cands[j].item_id))
    return [cands[j].item_id for j in order]


def time_mode(model, cfg, stats, lists, mode, repeats=3, warmup=5):
    """Per-query ranking times (ms); each query's time is its best of ``repeats``."""
    qp, ip = make_provider(cfg.features)
    cache = None
    if mode == "precompute":
        cache = {}
        for _, cands in lists:
            for r in cands:
                if r.item_id not in cache:
                    cache[r.item_id] = encode_item(ip, item_of(r))
    elif mode != "recompute":
        raise ContractError(f"unknown latency mode {mode!r}")
    for _, cands in lists[:warmup]:
        rank_candidates(model, qp, ip, stats, cands, cache)
    times = []
    gc_was = gc.isenabled()
    gc.disable()
    try:
        for _, cands in lists:
            best = float("inf")
            for _ in range(repeats):
                t = time.perf_counter()
                rank_candidates(model, qp, ip, stats, cands, cache)
                best = min(best, (time.perf_counter() - t) * 1e3)
            times.append(best)
    finally:
        if gc_was:
            gc.enable()
    return times


def host_info():
    return {
        "platform": platform.platform(),
        "processor": platform.processor() or platform.machine(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "cpus": os.cpu_count(),
    }


LATENCY_COLUMNS = ("mode", "n_queries", "n_candidates", "repeats", "p99_ms", "p50_ms",
                   "mean_ms", "host")


def cmd_bench_latency(checkpoint, data_dir, out, modes=("precompute", "recompute"),
                      n_queries=200, n_candidates=100, repeats=3):
    t0 = time.perf_counter()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    model, stats, cfg = load_model(checkpoint)
    lists = candidate_lists(load_splits(data_dir), n_queries, n_candidates)
    host = host_info()
    samples, rows = {}, []
    for mode in modes:
        ts = time_mode(model, cfg, stats, lists, mode, repeats)
        samples[mode] = ts
        rows.append({"mode": mode, "n_queries": len(ts), "n_candidates": n_candidates,
                     "repeats": repeats, "p99_ms": p99(ts), "p50_ms": float(np.median(ts)),
                     "mean_ms": float(np.mean(ts)), "host": json.dumps(host, sort_keys=True)})
        log.info("%s: P99 %.3f ms over %d queries", mode, rows[-1]["p99_ms"], len(ts))
    write_csv(out / "latency.csv", rows, LATENCY_COLUMNS)
    write_csv(out / "latency_samples.csv",
              [{"mode": m, "query_index": i, "ms": t} for m, ts in samples.items()
               for i, t in enumerate(ts)], ("mode", "query_index", "ms"))
    plot_latency(samples, {r["mode"]: r["p99_ms"] for r in rows}, out / "latency.png")
    man = RunManifest("bench-latency", {"checkpoint": str(checkpoint), "modes": list(modes),
                                        "n_queries": n_queries, "n_candidates": n_candidates,
                                        "repeats": repeats},
                      dataset_hash(data_dir), checkpoint=str(checkpoint),
                      metrics=str(out / "latency.csv"),
                      artifacts={"samples": str(out / "latency_samples.csv"),
                                 "figure": str(out / "latency.png"), "host": host},
                      wall_seconds=time.perf_counter() - t0)
    man.write(out)
    return rows


# -- gradcheck --------------------------------------------------------------

GRADCHECK_COLUMNS = ("check", "max_rel_error", "tolerance", "passed")


def cmd_gradcheck(out=None, n_points=10, seed=0, cfg=None):
    rows, ok, elapsed = run_gradcheck(n_points=n_points, seed=seed, cfg=cfg)
    for r in rows:
        status = "PASS" if r["passed"] else "FAIL"
        print(f"{status}  {r['check']:<16} max rel error {r['max_rel_error']:.3e}"
              f"  (tol {r['tolerance']:.0e})")
    print(f"{'all checks passed' if ok else 'gradient check FAILED'} in {elapsed:.1f}s")
    if out:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "gradcheck.csv", rows, GRADCHECK_COLUMNS)
    return rows, ok, elapsed
