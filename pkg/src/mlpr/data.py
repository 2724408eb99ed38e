"""Synthetic impression -> click -> add-to-cart -> purchase data, plus I/O.

Each query and item carries a latent vector; their inner product drives a
relevance score ``s = sigmoid(scale * u.v)`` and every funnel stage converts
with probability ``sigmoid(a_k * s + b_k)``. Texts are built from the
dominant latent directions so hashed text embeddings are informative.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ContractError, ParseError

TASKS = ("click", "atc", "purchase")
COUNT_COLUMNS = ("clicks", "atcs", "purchases")
PROB_COLUMNS = ("p_click", "p_atc", "p_purchase")
TEXT_COLUMNS = (
    "query_id", "item_id", "query_text", "item_title", "item_type",
    "item_brand", "item_color", "item_gender",
)

_TYPES = ("shoes", "shirt", "lamp", "phone case", "blender", "backpack", "tent", "mug")
_COLORS = ("red", "blue", "black", "white", "green", "", "grey")
_GENDERS = ("men", "women", "unisex", "", "kids")
_FILLER = ("new", "classic", "pro", "set", "pack", "deluxe", "mini", "plus", "soft")


@dataclass(frozen=True)
class EngagementRecord:
    query_id: str
    item_id: str
    query_text: str
    item_title: str
    item_type: str
    item_brand: str
    item_color: str
    item_gender: str
    impressions: int
    clicks: int
    atcs: int
    purchases: int
    features: tuple = ()
    p_click: float | None = None
    p_atc: float | None = None
    p_purchase: float | None = None

    @property
    def y_click(self):
        return int(self.clicks > 0)

    @property
    def y_atc(self):
        return int(self.atcs > 0)

    @property
    def y_purchase(self):
        return int(self.purchases > 0)

    @property
    def labels(self):
        return (self.y_click, self.y_atc, self.y_purchase)

    @property
    def counts(self):
        return (self.clicks, self.atcs, self.purchases)

    @property
    def truth(self):
        return (self.p_click, self.p_atc, self.p_purchase)

    def validate(self):
        if self.impressions < 1:
            raise ContractError(f"{self.query_id}/{self.item_id}: impressions < 1")
        if min(self.counts) < 0:
            raise ContractError(f"{self.query_id}/{self.item_id}: negative event count")
        if not self.y_purchase <= self.y_atc <= self.y_click:
            raise ContractError(
                f"{self.query_id}/{self.item_id}: funnel order violated {self.labels}"
            )


@dataclass
class FunnelParams:
    n_queries: int = 400
    n_items: int = 2000
    items_per_query: int = 40
    latent_dim: int = 8
    n_features: int = 32
    relevance_scale: float = 3.0
    # (a_k, b_k) per stage: p_click, p_atc | click, p_purchase | atc
    links: tuple = ((5.0, -6.0), (4.0, -4.5), (4.0, -3.5))
    impression_mean: float = 10.0
    feature_noise: float = 0.5
    seed: int = 0
    block_size: int = 64
    workers: int = 1

    def validate(self):
        if min(self.n_queries, self.n_items, self.items_per_query, self.latent_dim) < 1:
            raise ContractError("funnel params: counts must be >= 1")
        if self.items_per_query > self.n_items:
            raise ContractError("funnel params: items_per_query exceeds n_items")
        if not self.impression_mean > 0:
            raise ContractError("funnel params: impression mean must be positive")
        if len(self.links) != 3:
            raise ContractError("funnel params: need one (a, b) link per stage")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown funnel params: {sorted(unknown)}")
        d = dict(d)
        if "links" in d:
            d["links"] = tuple(tuple(x) for x in d["links"])
        return cls(**d)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _latent_tokens(vec, k):
    top = np.argsort(-np.abs(vec), kind="stable")[:k]
    return [f"w{j}{'a' if vec[j] > 0 else 'b'}" for j in top]


def _probe_weights(rng, n_features):
    n_informative = n_features // 2
    weights = np.zeros(n_features)
    weights[:n_informative] = rng.uniform(0.5, 2.0, n_informative)
    scales = rng.uniform(0.5, 20.0, n_features)
    offsets = rng.normal(0.0, 50.0, n_features)
    return weights, scales, offsets


def _gen_block(params, block_idx, q_lo, q_hi, seed_seq, items, weights, scales, offsets):
    rng = np.random.default_rng(seed_seq)
    v, titles, types, brands, colors, genders = items
    L = params.latent_dim
    links = np.array(params.links)
    out = []
    for q in range(q_lo, q_hi):
        u = rng.normal(0.0, L ** -0.25, L)
        qtext = " ".join(_latent_tokens(u, 3))
        cand = rng.choice(params.n_items, params.items_per_query, replace=False)
        s = _sigmoid(params.relevance_scale * (v[cand] @ u))
        p = _sigmoid(links[:, 0][None, :] * s[:, None] + links[:, 1][None, :])
        impressions = 1 + rng.poisson(params.impression_mean, len(cand))
        clicks = rng.binomial(impressions, p[:, 0])
        atcs = rng.binomial(clicks, p[:, 1])
        purchases = rng.binomial(atcs, p[:, 2])
        noise = rng.standard_normal((len(cand), params.n_features))
        raw = s[:, None] * weights[None, :] + params.feature_noise * noise
        feats = raw * scales + offsets
        for j, m in enumerate(cand):
            out.append(EngagementRecord(
                query_id=f"q{q:06d}",
                item_id=f"i{m:07d}",
                query_text=qtext,
                item_title=titles[m],
                item_type=types[m],
                item_brand=brands[m],
                item_color=colors[m],
                item_gender=genders[m],
                impressions=int(impressions[j]),
                clicks=int(clicks[j]),
                atcs=int(atcs[j]),
                purchases=int(purchases[j]),
                features=tuple(float(x) for x in feats[j]),
                p_click=float(p[j, 0]),
                p_atc=float(p[j, 1]),
                p_purchase=float(p[j, 2]),
            ))
    return block_idx, out


def generate(params: FunnelParams) -> list[EngagementRecord]:
    """Deterministic synthetic funnel dataset.

    Queries are generated in blocks with seeds spawned from ``params.seed``,
    so the output does not depend on ``params.workers``.
    """
    params.validate()
    root = np.random.SeedSequence(params.seed)
    item_seq, probe_seq, block_root = root.spawn(3)
    irng = np.random.default_rng(item_seq)
    L = params.latent_dim
    v = irng.normal(0.0, L ** -0.25, (params.n_items, L))
    titles, types, brands, colors, genders = [], [], [], [], []
    for m in range(params.n_items):
        words = _latent_tokens(v[m], 4)
        words.insert(int(irng.integers(0, 5)), _FILLER[int(irng.integers(len(_FILLER)))])
        titles.append(" ".join(words))
        types.append(_TYPES[int(irng.integers(len(_TYPES)))])
        brands.append(f"brand{int(irng.integers(50))}")
        colors.append(_COLORS[int(irng.integers(len(_COLORS)))])
        genders.append(_GENDERS[int(irng.integers(len(_GENDERS)))])
    items = (v, titles, types, brands, colors, genders)
    weights, scales, offsets = _probe_weights(np.random.default_rng(probe_seq), params.n_features)

    bounds = list(range(0, params.n_queries, params.block_size))
    seqs = block_root.spawn(len(bounds))
    jobs = [
        (params, b, lo, min(lo + params.block_size, params.n_queries), seqs[b], items,
         weights, scales, offsets)
        for b, lo in enumerate(bounds)
    ]
    if params.workers > 1:
        with ThreadPoolExecutor(params.workers) as pool:
            results = list(pool.map(lambda a: _gen_block(*a), jobs))
    else:
        results = [_gen_block(*a) for a in jobs]
    results.sort(key=lambda r: r[0])
    return [rec for _, block in results for rec in block]


def filter_min_impressions(records, threshold=5):
    """Drop pairs with ``impressions <= threshold``."""
    if threshold < 0:
        raise ContractError("threshold must be >= 0")
    return [r for r in records if r.impressions > threshold]


@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list
    fractions: tuple = (0.8, 0.1, 0.1)
    by_query: bool = False

    def parts(self):
        return {"train": self.train, "val": self.validation, "test": self.test}


def _cut(n, fractions):
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return n_train, n_train + n_val


def split(records, fractions=(0.8, 0.1, 0.1), seed=0, by_query=False) -> DatasetSplit:
    """Seeded shuffle then contiguous 80/10/10 style cut.

    With ``by_query`` the cut is made over distinct query ids, so no query
    appears in two parts.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) <= 0 or abs(sum(fractions) - 1) > 1e-9:
        raise ContractError(f"split fractions must be 3 positive numbers summing to 1: {fractions}")
    if len(records) < 3:
        raise ContractError("split needs at least 3 records")
    rng = np.random.default_rng(seed)
    if by_query:
        qids = sorted({r.query_id for r in records})
        order = rng.permutation(len(qids))
        a, b = _cut(len(qids), fractions)
        part = {}
        for rank, i in enumerate(order):
            part[qids[i]] = 0 if rank < a else 1 if rank < b else 2
        buckets = ([], [], [])
        for r in records:
            buckets[part[r.query_id]].append(r)
        return DatasetSplit(*buckets, fractions=fractions, by_query=True)
    order = rng.permutation(len(records))
    a, b = _cut(len(records), fractions)
    pick = lambda idx: [records[i] for i in idx]  # noqa: E731
    return DatasetSplit(pick(order[:a]), pick(order[a:b]), pick(order[b:]), fractions)


def columns(n_features, with_truth):
    cols = [*TEXT_COLUMNS, "impressions", *COUNT_COLUMNS]
    cols += [f"f_{j}" for j in range(n_features)]
    if with_truth:
        cols += list(PROB_COLUMNS)
    return cols


def _fmt(x):
    return repr(float(x))


def save_tsv(records, path):
    records = list(records)
    n_features = len(records[0].features) if records else 0
    with_truth = bool(records) and records[0].p_click is not None
    lines = ["\t".join(columns(n_features, with_truth))]
    for r in records:
        texts = [getattr(r, c) for c in TEXT_COLUMNS]
        for t in texts:
            if "\t" in t or "\n" in t:
                raise ContractError(f"{r.query_id}/{r.item_id}: text contains tab or newline")
        if len(r.features) != n_features:
            raise ContractError(f"{r.query_id}/{r.item_id}: feature count differs from dataset")
        row = texts + [str(r.impressions), str(r.clicks), str(r.atcs), str(r.purchases)]
        row += [_fmt(x) for x in r.features]
        if with_truth:
            row += [_fmt(x) for x in r.truth]
        lines.append("\t".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_tsv(path) -> list[EngagementRecord]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    rows = text.split("\n")
    if rows and rows[-1] == "":
        rows.pop()
    if not rows:
        raise ParseError(path, 1, "empty file, header expected")
    header = rows[0].split("\t")
    base = len(TEXT_COLUMNS) + 4
    if header[:base] != [*TEXT_COLUMNS, "impressions", *COUNT_COLUMNS]:
        raise ParseError(path, 1, "unexpected header")
    with_truth = header[-3:] == list(PROB_COLUMNS)
    n_features = len(header) - base - (3 if with_truth else 0)
    if header != columns(n_features, with_truth):
        raise ParseError(path, 1, "unexpected header")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        cells = row.split("\t")
        if len(cells) != len(header):
            raise ParseError(path, lineno, f"expected {len(header)} columns, got {len(cells)}")
        try:
            ints = [int(c) for c in cells[len(TEXT_COLUMNS):base]]
            feats = tuple(float(c) for c in cells[base:base + n_features])
            truth = [float(c) for c in cells[base + n_features:]] if with_truth else [None] * 3
        except ValueError as exc:
            raise ParseError(path, lineno, str(exc)) from None
        rec = EngagementRecord(*cells[: len(TEXT_COLUMNS)], *ints, feats, *truth)
        try:
            rec.validate()
        except ContractError as exc:
            raise ParseError(path, lineno, str(exc)) from None
        out.append(rec)
    return out


def file_sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def summary(records):
    """Distinct queries and items, pair count and total impressions."""
    return {
        "queries": len({r.query_id for r in records}),
        "items": len({r.item_id for r in records}),
        "pairs": len(records),
        "impressions": int(sum(r.impressions for r in records)),
    }


def label_matrix(records):
    return np.array([r.labels for r in records], dtype=np.float64).reshape(-1, 3)


def count_matrix(records):
    return np.array([r.counts for r in records], dtype=np.float64).reshape(-1, 3)


def truth_matrix(records):
    """Entire-space ground truth: click, click*atc, click*atc*purchase."""
    p = np.array([r.truth for r in records], dtype=np.float64).reshape(-1, 3)
    return np.cumprod(p, axis=1)


def params_dict(params: FunnelParams):
    d = asdict(params)
    d["links"] = [list(x) for x in params.links]
    return d


def expected_click_rate(records):
    """Mean ground-truth click probability per impression, with its standard error."""
    n = np.array([r.impressions for r in records], dtype=np.float64)
    p = np.array([r.p_click for r in records])
    rate = float(np.sum(n * p) / np.sum(n))
    se = math.sqrt(float(np.sum(n * p * (1 - p)))) / float(np.sum(n))
    return rate, se
