"""Acceptance criteria. Each test is tagged with its criterion number; the
terminal summary prints one PASS/FAIL line per criterion."""

import hashlib
import itertools
import math
import time

import numpy as np
import pytest

from mlpr import data as fd
from mlpr.autodiff import Graph, Tensor
from mlpr.cli import main
from mlpr.config import preset
from mlpr.harness import (
    ABLATION_COLUMNS,
    ABLATION_STEPS,
    ablation_configs,
    cmd_ablate,
    cmd_bench_latency,
    cmd_gradcheck,
    scores_for,
)
from mlpr.metrics import auc, ndcg_at_k
from mlpr.model import RankingModel
from mlpr.objective import combine_uncertainty, uncertainty_sigma_form
from mlpr.reporting import evaluate_scores, lookup, read_csv
from mlpr.training import overfit, train

from .conftest import small_config


def _randomize(model, rng, scale):
    for p in model.params.values():
        p.data = rng.normal(0.0, scale, size=p.data.shape)


def _tiny_inputs(cfg, n, rng):
    d = 5 * cfg.features.dim + 1 + cfg.data.funnel.n_features
    return d, rng.normal(0.0, 2.0, size=(n, d))


# 1 -------------------------------------------------------------------------

@pytest.mark.criterion(1, "gradient integrity (ops < 1e-4, tiny model < 1e-3, < 60 s)")
def test_gradient_integrity(tmp_path, measure):
    t0 = time.perf_counter()
    rows, ok, _ = cmd_gradcheck(tmp_path, n_points=10)
    wall = time.perf_counter() - t0
    ops = max(r["max_rel_error"] for r in rows if r["check"].startswith("op:"))
    model = [r["max_rel_error"] for r in rows if r["check"] == "model:tiny"][0]
    measure.update(worst_op=ops, model=model, seconds=wall)
    assert ops < 1e-4
    assert model < 1e-3
    assert ok
    assert wall < 60


# 2 -------------------------------------------------------------------------

@pytest.mark.criterion(2, "funnel monotonicity over 10^4 model/input draws")
def test_funnel_monotonicity(tiny_cfg, measure):
    rng = np.random.default_rng(2)
    violations, draws = 0, 0
    d, _ = _tiny_inputs(tiny_cfg, 1, rng)
    for m in range(200):
        model = RankingModel(tiny_cfg.with_seed(m).model, d)
        _randomize(model, rng, scale=[0.1, 1.0, 5.0, 20.0][m % 4])
        X = rng.normal(0.0, 3.0, size=(50, d))
        y = model.predict(X)
        violations += int(np.sum(y[:, 0] < y[:, 1]) + np.sum(y[:, 1] < y[:, 2]))
        draws += X.shape[0]
    measure.update(draws=draws, violations=violations)
    assert draws == 10_000
    assert violations == 0


# 3 -------------------------------------------------------------------------

@pytest.mark.criterion(3, "gate and attention rows sum to 1 +- 1e-9 over 10^3 draws")
def test_gate_normalization(tiny_cfg, measure):
    rng = np.random.default_rng(3)
    d, _ = _tiny_inputs(tiny_cfg, 1, rng)
    worst, rows_checked = 0.0, 0
    for m in range(1000):
        cfg = tiny_cfg.with_model(attention_readout="mean" if m % 2 else "position")
        if m % 50 == 0:
            model = RankingModel(cfg.model, d)
            _randomize(model, rng, scale=[0.3, 3.0][(m // 50) % 2])
        model.cfg = cfg.model
        for unit in model.attention:
            unit.readout = cfg.model.attention_readout
        X = rng.normal(0.0, 2.0, size=(int(rng.integers(2, 9)), d))
        out = model.forward(Graph(record=False), Tensor(X), "train", rng)
        groups = [out.trace[k] for k in ("stage1_gates", "stage2_gates", "attention_rows")]
        assert all(groups)
        for w in itertools.chain(*groups):
            worst = max(worst, float(np.abs(w.sum(axis=-1) - 1.0).max()))
            rows_checked += w.shape[0]
    measure.update(draws=1000, rows=rows_checked, worst=worst)
    assert worst <= 1e-9


# 4 -------------------------------------------------------------------------

def _task_grads(model, X, Y, rng_seed):
    """Per-task gradient maps {param name: grad} from separate backward passes."""
    grads = []
    for j in range(3):
        g = Graph()
        model.store.zero_grad()
        out = model.forward(g, Tensor(X), "train", np.random.default_rng(rng_seed))
        _, losses = model.loss(g, out, Y)
        g.backward(losses[j])
        grads.append({n: p.grad.copy() for n, p in model.params.items()})
    return grads


def _specific(name, k):
    return name.startswith(f"stage2/task{k}/")


def _shared(name):
    return name.startswith("stage1/expert") or name.startswith("stage2/shared")


@pytest.mark.criterion(4, "gradient isolation of task-specific experts")
def test_gradient_isolation_between_tasks(tiny_cfg, measure):
    """With the cross-task paths (attention, transfer) off, each task loss
    reaches only its own specific experts; shared experts hear every task."""
    cfg = tiny_cfg.with_model(attention_units=False, probability_transfer=False)
    rng = np.random.default_rng(4)
    checked = 0
    for b in range(10):
        d, X = _tiny_inputs(cfg, 8, rng)
        Y = rng.integers(0, 2, size=(8, 3)).astype(float)
        Y[:, 1] *= Y[:, 0]
        Y[:, 2] *= Y[:, 1]
        model = RankingModel(cfg.with_seed(b).model, d)
        grads = _task_grads(model, X, Y, b)
        for j, k in itertools.product(range(3), repeat=2):
            for name in model.params:
                if _specific(name, k):
                    if j != k:
                        assert np.all(grads[j][name] == 0.0), (j, k, name)
                        checked += 1
        for j in range(3):
            assert any(np.any(grads[j][n] != 0) for n in model.params if _shared(n)), j
            assert any(np.any(grads[j][n] != 0) for n in model.params if _specific(n, j)), j
    measure.update(batches=10, zero_checks=checked)


@pytest.mark.criterion(4, "gradient isolation of task-specific experts")
def test_gradient_isolation_in_full_model(tiny_cfg):
    """In the full model later tasks read earlier ones through attention and
    the funnel product, so only upstream losses are isolated."""
    rng = np.random.default_rng(40)
    for b in range(10):
        d, X = _tiny_inputs(tiny_cfg, 8, rng)
        Y = np.zeros((8, 3))
        Y[::2, 0] = 1
        model = RankingModel(tiny_cfg.with_seed(b).model, d)
        grads = _task_grads(model, X, Y, b)
        for j, k in itertools.product(range(3), repeat=2):
            for name in model.params:
                if _specific(name, k) and j < k:
                    assert np.all(grads[j][name] == 0.0), (j, k, name)
        for j in range(3):
            assert any(np.any(grads[j][n] != 0) for n in model.params if _shared(n))


# 5 -------------------------------------------------------------------------

def _brute_auc(s, y):
    pos = [a for a, t in zip(s, y) if t]
    neg = [a for a, t in zip(s, y) if not t]
    return sum((p > n) + 0.5 * (p == n) for p in pos for n in neg) / (len(pos) * len(neg))


def _brute_ndcg(gains, k):
    disc = 1.0 / np.log2(np.arange(2, min(k, len(gains)) + 2))
    dcg = float(np.dot(np.asarray(gains[: len(disc)], float), disc))
    perms = np.array(list(itertools.permutations(gains, len(disc))), dtype=float)
    ideal = float((perms @ disc).max())
    return None if ideal == 0 else dcg / ideal


@pytest.mark.criterion(5, "AUC and NDCG@k match brute-force oracles within 1e-12")
def test_metric_oracles(measure):
    rng = np.random.default_rng(5)
    worst_auc = worst_ndcg = 0.0
    n_auc = n_ndcg = 0
    while n_auc < 1000 or n_ndcg < 1000:
        n = int(rng.integers(2, 9))
        if n_auc < 1000:
            s = rng.integers(0, 5, n) / 4 if rng.random() < 0.5 else rng.random(n)
            y = rng.integers(0, 2, n)
            if 0 < y.sum() < n:
                worst_auc = max(worst_auc, abs(auc(s, y) - _brute_auc(s, y)))
                n_auc += 1
        if n_ndcg < 1000:
            gains = list(rng.integers(0, 4, n))
            k = int(rng.integers(1, n + 1))
            want = _brute_ndcg(gains, k)
            got = ndcg_at_k(gains, k)
            assert (got is None) == (want is None)
            if want is not None:
                worst_ndcg = max(worst_ndcg, abs(got - want))
            n_ndcg += 1
    measure.update(auc_cases=n_auc, ndcg_cases=n_ndcg, auc_err=worst_auc, ndcg_err=worst_ndcg)
    assert worst_auc <= 1e-12
    assert worst_ndcg <= 1e-12


# 6 -------------------------------------------------------------------------

@pytest.mark.criterion(6, "uncertainty loss: s=0 is half the sum; s-form equals sigma-form")
def test_loss_equivalences(measure):
    rng = np.random.default_rng(6)
    L = list(rng.random(3) * 3)
    zero = combine_uncertainty(Graph(), [Tensor(v) for v in L], Tensor(np.zeros(3))).item()
    assert zero == (L[0] + L[1] + L[2]) / 2
    worst = 0.0
    for _ in range(100):
        L = rng.random(3) * 5
        s = rng.normal(0.0, 1.5, 3)
        got = combine_uncertainty(Graph(), [Tensor(v) for v in L], Tensor(s)).item()
        want = uncertainty_sigma_form(L, np.exp(s / 2))
        worst = max(worst, abs(got - want))
    measure.update(draws=100, worst=worst)
    assert worst <= 1e-12


# 7 -------------------------------------------------------------------------

@pytest.mark.criterion(7, "overfit preset reaches loss < 0.05 within 2000 steps, < 2 min")
def test_trainability(measure):
    cfg = preset("overfit")
    records = fd.filter_min_impressions(fd.generate(cfg.data.funnel), cfg.data.min_impressions)
    assert len(records) >= 64
    t0 = time.perf_counter()
    loss, res = overfit(cfg, records, n_samples=64)
    wall = time.perf_counter() - t0
    measure.update(final_loss=loss, steps=res.steps, seconds=wall)
    assert res.steps <= 2000
    assert loss < 0.05
    assert wall < 120


# 8 -------------------------------------------------------------------------

@pytest.mark.criterion(8, "MLPR AUC non-inferior (0.005) to MTL on Click and single-task on ATC/Purchase")
def test_directional_ordering(measure):
    t0 = time.perf_counter()
    cfg = preset("desk")
    records = fd.filter_min_impressions(fd.generate(cfg.data.funnel), cfg.data.min_impressions)
    sp = fd.split(records, cfg.data.fractions, cfg.data.split_seed, cfg.data.by_query)
    parts = {"train": sp.train, "val": sp.validation}
    base = cfg.with_model(uncertainty_loss=False, specific_experts=False,
                          attention_units=False, probability_transfer=False)
    variants = {"mlpr": cfg, "mtl": base, "single": base.with_model(single_task=True)}
    aucs = {}
    for name, vcfg in variants.items():
        res = train(vcfg, parts)
        rows, _ = evaluate_scores(name, sp.test, scores_for(res.model, res.config, res.stats,
                                                            sp.test))
        aucs[name] = {t: lookup(rows, name, t, "auc") for t in fd.TASKS}
    wall = time.perf_counter() - t0
    measure.update(pairs=len(records),
                   click=f"{aucs['mlpr']['click']:.4f} vs mtl {aucs['mtl']['click']:.4f}",
                   atc=f"{aucs['mlpr']['atc']:.4f} vs single {aucs['single']['atc']:.4f}",
                   purchase=f"{aucs['mlpr']['purchase']:.4f} vs single "
                            f"{aucs['single']['purchase']:.4f}",
                   seconds=wall)
    assert 45_000 <= len(records) <= 55_000
    assert aucs["mlpr"]["click"] >= aucs["mtl"]["click"] - 0.005
    assert aucs["mlpr"]["atc"] >= aucs["single"]["atc"] - 0.005
    assert aucs["mlpr"]["purchase"] >= aucs["single"]["purchase"] - 0.005
    assert wall < 15 * 60


# 9 -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def bench_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")
    cfg = preset("bench")
    cfg.train.max_steps = 10  # timing does not depend on how well the weights fit
    from mlpr.harness import cmd_gen_data, cmd_train

    cmd_gen_data(cfg, root / "data")
    cmd_train(cfg, root / "data", root / "train")
    return root


@pytest.mark.criterion(9, "precompute P99 < recompute P99 (200 queries x 100 candidates)")
def test_latency_direction(bench_run, measure):
    rows = cmd_bench_latency(bench_run / "train" / "model.ckpt", bench_run / "data",
                             bench_run / "latency", n_queries=200, n_candidates=100)
    p = {r["mode"]: r["p99_ms"] for r in rows}
    measure.update(precompute_ms=p["precompute"], recompute_ms=p["recompute"])
    assert all(r["n_queries"] == 200 and r["n_candidates"] == 100 for r in rows)
    assert p["precompute"] < p["recompute"]
    assert (bench_run / "latency" / "latency.png").exists()


def test_precompute_p99_is_stable(bench_run):
    runs = [
        cmd_bench_latency(bench_run / "train" / "model.ckpt", bench_run / "data",
                          bench_run / f"stab{i}", modes=("precompute",))[0]["p99_ms"]
        for i in range(2)
    ]
    assert abs(runs[0] - runs[1]) <= 0.2 * max(runs)


# 10 ------------------------------------------------------------------------

def _digest(path, skip_column=None):
    if skip_column is None:
        return hashlib.sha256(path.read_bytes()).hexdigest()
    lines = path.read_text().splitlines()
    drop = lines[0].split(",").index(skip_column)
    kept = [",".join(c for i, c in enumerate(line.split(",")) if i != drop) for line in lines]
    return hashlib.sha256("\n".join(kept).encode()).hexdigest()


def _pipeline(root, cfg_path):
    data, tr, ev = root / "data", root / "train", root / "eval"
    assert main(["--config", str(cfg_path), "--seed", "17", "--out", str(data), "gen-data"]) == 0
    assert main(["--config", str(cfg_path), "--seed", "17", "--out", str(tr), "train",
                 "--data", str(data)]) == 0
    assert main(["--seed", "17", "--out", str(ev), "eval", "--data", str(data),
                 "--checkpoint", f"mlpr={tr / 'model.ckpt'}", "--baseline", "random"]) == 0
    files = {f"data/{n}": data / n for n in ("train.tsv", "val.tsv", "test.tsv")}
    files |= {"train/model.ckpt": tr / "model.ckpt", "train/model.json": tr / "model.json",
              "eval/metrics.csv": ev / "metrics.csv", "eval/ttest.csv": ev / "ttest.csv",
              "eval/metrics.png": ev / "metrics.png"}
    out = {k: _digest(p) for k, p in files.items()}
    out["train/model.log.csv"] = _digest(tr / "model.log.csv", skip_column="wall_ms")
    return out


@pytest.mark.criterion(10, "gen-data, train and eval reruns give identical hashes")
def test_determinism(tmp_path, measure):
    cfg_path = small_config(tmp_path, epochs=1)
    a = _pipeline(tmp_path / "a", cfg_path)
    b = _pipeline(tmp_path / "b", cfg_path)
    measure.update(files=len(a))
    assert a == b


# 11 ------------------------------------------------------------------------

@pytest.mark.criterion(11, "ablation emits 6 variants x 3 tasks x {AUC, NDCG@1, NDCG@5} with deltas")
def test_ablation_grid(small_run, tmp_path, measure):
    from mlpr.config import load_config

    cfg = load_config(small_run["config"])
    configs = ablation_configs(cfg)
    for (_, _, a), (_, toggle, b) in zip(configs, configs[1:]):
        da, db = a.model.toggles(), b.model.toggles()
        assert [t for t in da if da[t] != db[t]] == [toggle]
    rows = cmd_ablate(cfg, small_run["data"], tmp_path)
    table = read_csv(tmp_path / "ablation.csv", ABLATION_COLUMNS)
    assert len(rows) == len(table) == 6 * 3 * 3
    cells = {(r["model_variant"], r["task"], r["metric"], r["k"]) for r in table}
    want = {(v, t, m, k) for v, _ in ABLATION_STEPS for t in fd.TASKS
            for m, k in (("auc", ""), ("ndcg", 1), ("ndcg", 5))}
    assert cells == want
    by_key = {(r["variant_index"], r["task"], r["metric"], r["k"]): r for r in table}
    for (i, t, m, k), r in by_key.items():
        assert math.isfinite(r["value"]), r
        if i == 0:
            assert math.isnan(r["delta"])
        else:
            assert r["delta"] == r["value"] - by_key[(i - 1, t, m, k)]["value"]
    assert "non-faithful" in by_key[(5, "click", "auc", "")]["note"]
    assert (tmp_path / "ablation.png").exists()
    measure.update(rows=len(table))
