"""Ranking metrics: AUC, NDCG@k, P99 latency, paired t-test."""

from __future__ import annotations

import math
from collections import defaultdict

import numpy as np
from scipy import stats as sps

from .errors import ContractError, UndefinedMetricError


def auc(scores, labels):
    """ROC AUC in Mann-Whitney form; tied scores count one half."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ContractError(f"auc: {scores.shape[0]} scores vs {labels.shape[0]} labels")
    if not np.all(np.isfinite(scores)):
        raise ContractError("auc: scores must be finite")
    pos = labels > 0
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("auc needs at least one positive and one negative label")
    ranks = sps.rankdata(scores)  # average ranks for ties
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def dcg_at_k(gains, k):
    gains = np.asarray(gains, dtype=np.float64)[:k]
    return float(np.sum(gains / np.log2(np.arange(2, gains.size + 2))))


def ndcg_at_k(ranked_gains, k):
    """NDCG@k for gains already listed in ranked order (linear gains).

    Returns ``None`` when every gain is zero; callers count those as skipped.
    """
    if k < 1:
        raise ContractError(f"ndcg_at_k: k must be >= 1, got {k}")
    gains = np.asarray(ranked_gains, dtype=np.float64)
    ideal = dcg_at_k(np.sort(gains)[::-1], k)
    if ideal == 0.0:
        return None
    return dcg_at_k(gains, k) / ideal


def rank_order(scores, item_ids):
    """Indices sorting by descending score, ties broken by ascending item id."""
    return sorted(range(len(scores)), key=lambda j: (-scores[j], item_ids[j]))


def per_query_ndcg(query_ids, item_ids, scores, gains, k):
    """``{query_id: ndcg}`` plus the number of all-zero-gain queries skipped."""
    groups = defaultdict(list)
    for j, q in enumerate(query_ids):
        groups[q].append(j)
    out, skipped = {}, 0
    for q in sorted(groups):
        idx = groups[q]
        order = rank_order([scores[j] for j in idx], [item_ids[j] for j in idx])
        value = ndcg_at_k([gains[idx[o]] for o in order], k)
        if value is None:
            skipped += 1
        else:
            out[q] = value
    return out, skipped


def stable_mean(values):
    """Mean with exactly rounded summation, so the result ignores input order."""
    values = list(values)
    if not values:
        return float("nan")
    return math.fsum(values) / len(values)


def p99(samples):
    """Element at index ceil(0.99 n) - 1 of the ascending-sorted samples."""
    xs = sorted(float(x) for x in samples)
    if not xs:
        raise ContractError("p99 needs at least one sample")
    idx = (99 * len(xs) + 99) // 100 - 1  # integer ceil(0.99 n) - 1
    return xs[idx]


def paired_ttest(a: dict, b: dict):
    """Two-tailed paired t-test over the keys present in both maps."""
    keys = sorted(set(a) & set(b))
    if len(keys) < 2:
        return float("nan"), float("nan"), len(keys)
    x = np.array([a[k] for k in keys])
    y = np.array([b[k] for k in keys])
    if np.allclose(x, y):
        return 0.0, 1.0, len(keys)
    res = sps.ttest_rel(x, y)
    return float(res.statistic), float(res.pvalue), len(keys)
