"""Per-task metric rows and the CSV reports built from them."""

from __future__ import annotations

import csv
import math

import numpy as np

from . import data as fd
from .errors import ParseError, UndefinedMetricError
from .metrics import auc, paired_ttest, per_query_ndcg, stable_mean

METRIC_COLUMNS = ("model_variant", "task", "metric", "k", "value", "n_queries", "n_skipped")
TTEST_COLUMNS = ("run_a", "run_b", "task", "metric", "k", "t_stat", "p_value", "n_queries",
                 "test")
NDCG_KS = (1, 5)


def evaluate_scores(name, records, scores):
    """Metric rows for an (n x 3) score matrix, plus per-query NDCG maps.

    Returns ``(rows, per_query)`` where ``per_query[(task, k)]`` maps
    query id to NDCG@k, used for paired significance tests.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = fd.label_matrix(records)
    counts = fd.count_matrix(records)
    qids = [r.query_id for r in records]
    iids = [r.item_id for r in records]
    n_queries = len(set(qids))
    rows, per_query = [], {}
    for k, task in enumerate(fd.TASKS):
        try:
            value = auc(scores[:, k], labels[:, k])
            rows.append(dict(model_variant=name, task=task, metric="auc", k="", value=value,
                             n_queries=n_queries, n_skipped=0))
        except UndefinedMetricError:
            rows.append(dict(model_variant=name, task=task, metric="auc", k="",
                             value=float("nan"), n_queries=n_queries, n_skipped=n_queries))
        for cut in NDCG_KS:
            vals, skipped = per_query_ndcg(qids, iids, scores[:, k], counts[:, k], cut)
            per_query[(task, cut)] = vals
            rows.append(dict(model_variant=name, task=task, metric="ndcg", k=cut,
                             value=stable_mean(vals.values()), n_queries=len(vals),
                             n_skipped=skipped))
    return rows, per_query


def ttest_rows(per_query_by_run: dict):
    """Per-query paired t-tests on NDCG for every pair of named runs."""
    names = list(per_query_by_run)
    rows = []
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            for (task, cut), qa in per_query_by_run[a].items():
                qb = per_query_by_run[b].get((task, cut), {})
                t, p, n = paired_ttest(qa, qb)
                rows.append(dict(run_a=a, run_b=b, task=task, metric="ndcg", k=cut,
                                 t_stat=t, p_value=p, n_queries=n, test="paired-per-query"))
    return rows


def percentile_groups(records):
    """Split records into 0-25 / 25-75 / 75-100 percentile groups by impressions."""
    order = sorted(range(len(records)), key=lambda j: (records[j].impressions, j))
    n = len(order)
    cuts = [(0, n // 4, "p0-25"), (n // 4, (3 * n) // 4, "p25-75"), ((3 * n) // 4, n, "p75-100")]
    return {label: sorted(order[a:b]) for a, b, label in cuts}


def _cell(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_csv(path, rows, columns):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c, "")) for c in columns])


def _parse(v):
    if v == "":
        return ""
    for conv in (int, float):
        try:
            return conv(v)
        except ValueError:
            pass
    return v


def read_csv(path, columns=None):
    """Load a report written by :func:`write_csv`, converting numeric cells."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(path, 1, "empty report") from None
        if columns is not None and tuple(header[: len(columns)]) != tuple(columns):
            raise ParseError(path, 1, f"unexpected header {header}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(path, lineno, f"expected {len(header)} cells, got {len(row)}")
            out.append({h: _parse(v) for h, v in zip(header, row)})
    return out


def read_metrics(path):
    return read_csv(path, METRIC_COLUMNS)


def lookup(rows, variant, task, metric, k=""):
    for r in rows:
        if (r["model_variant"], r["task"], r["metric"], r["k"]) == (variant, task, metric, k):
            return r["value"]
    raise KeyError((variant, task, metric, k))


def write_metrics(path, rows):
    write_csv(path, rows, METRIC_COLUMNS)
