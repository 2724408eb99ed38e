"""Deep & wide input construction.

A feature row is laid out as::

    query emb (d) | item emb (d) | cosine (1) | hadamard (d) | query ++ item (2d) | ranking (F)
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, MissingEmbeddingError, ParseError

FIELD_SEP = "[sep]"


@dataclass(frozen=True)
class QueryRecord:
    query_id: str
    text: str


@dataclass(frozen=True)
class ItemRecord:
    item_id: str
    title: str
    type: str = ""
    brand: str = ""
    color: str = ""
    gender: str = ""

    def text(self):
        return f" {FIELD_SEP} ".join(
            (self.title, self.type, self.brand, self.color, self.gender)
        )


def tokenize(text):
    return text.lower().split()


class HashEncoder:
    """Signed feature hashing of token 1..3-grams into ``dim`` buckets, L2-normalized."""

    mode = "hash-encoder"

    def __init__(self, dim=256, seed=0, max_n=3):
        self.dim = dim
        self.seed = seed
        self.max_n = max_n
        self._key = int(seed).to_bytes(8, "little", signed=False)

    def embed(self, key, text):
        vec = np.zeros(self.dim)
        toks = tokenize(text)
        for n in range(1, self.max_n + 1):
            for i in range(len(toks) - n + 1):
                gram = " ".join(toks[i : i + n]).encode("utf-8")
                h = int.from_bytes(
                    hashlib.blake2b(gram, digest_size=8, key=self._key).digest(), "little"
                )
                vec[h % self.dim] += 1.0 if h >> 63 else -1.0
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


class FileLookup:
    """Embeddings read from a TSV of ``id`` followed by ``dim`` floats."""

    mode = "file-lookup"

    def __init__(self, table: dict[str, np.ndarray]):
        dims = {len(v) for v in table.values()}
        if len(dims) > 1:
            raise DimensionError(f"embedding file mixes dimensions {sorted(dims)}")
        self.table = table
        self.dim = dims.pop() if dims else 0

    @classmethod
    def from_tsv(cls, path):
        table = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                cells = line.rstrip("\n").split("\t")
                if len(cells) < 2:
                    raise ParseError(path, lineno, "expected id followed by floats")
                try:
                    table[cells[0]] = np.array([float(c) for c in cells[1:]])
                except ValueError as exc:
                    raise ParseError(path, lineno, str(exc)) from None
        return cls(table)

    def embed(self, key, text=None):
        try:
            return self.table[key].copy()
        except KeyError:
            raise MissingEmbeddingError(key) from None


def save_embeddings_tsv(path, table: dict[str, np.ndarray]):
    lines = ["\t".join([k, *(repr(float(x)) for x in v)]) for k, v in table.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def encode_query(provider, query: QueryRecord):
    return provider.embed(query.query_id, query.text)


def encode_item(provider, item: ItemRecord):
    return provider.embed(item.item_id, item.text())


def interactions(mu_q, mu_i):
    """(cosine, hadamard, concatenation) of a query and an item embedding."""
    mu_q = np.asarray(mu_q, dtype=np.float64)
    mu_i = np.asarray(mu_i, dtype=np.float64)
    if mu_q.shape != mu_i.shape or mu_q.ndim != 1:
        raise DimensionError(f"interactions: shapes {mu_q.shape} and {mu_i.shape}")
    cos = cosine_rows(mu_q[None, :], mu_i[None, :])[0]
    return float(cos), mu_q * mu_i, np.concatenate([mu_q, mu_i])


def cosine_rows(Q, I):
    nq = np.linalg.norm(Q, axis=1)
    ni = np.linalg.norm(I, axis=1)
    denom = nq * ni
    zero = denom == 0
    if np.any(zero):
        warnings.warn("cosine of a zero embedding taken as 0", RuntimeWarning, stacklevel=3)
    cos = np.einsum("ij,ij->i", Q, I) / np.where(zero, 1.0, denom)
    return np.clip(np.where(zero, 0.0, cos), -1.0, 1.0)


@dataclass(frozen=True)
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray
    fitted_on: str = "train"


def zscore_fit(features, fitted_on="train") -> NormalizationStats:
    """Population mean and standard deviation per column."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DimensionError(f"zscore_fit needs a matrix with >= 2 rows, got {X.shape}")
    return NormalizationStats(X.mean(axis=0), X.std(axis=0), fitted_on)


def zscore_apply(stats: NormalizationStats, features):
    X = np.asarray(features, dtype=np.float64)
    if X.shape[-1] != len(stats.mean):
        raise DimensionError(
            f"zscore_apply: {X.shape[-1]} features, stats fitted on {len(stats.mean)}"
        )
    return (X - stats.mean) / np.maximum(stats.std, 1e-8)


class FeatureLayout:
    """Named segments of an assembled feature row."""

    def __init__(self, dim, n_features):
        self.dim = dim
        self.n_features = n_features
        sizes = [
            ("query", dim), ("item", dim), ("cosine", 1), ("hadamard", dim),
            ("concat", 2 * dim), ("ranking", n_features),
        ]
        self.segments = {}
        start = 0
        for name, size in sizes:
            self.segments[name] = slice(start, start + size)
            start += size
        self.length = start

    def take(self, x, name):
        return np.asarray(x)[..., self.segments[name]]


def assemble(mu_q, mu_i, inter, ranking):
    """Concatenate one row; ``inter`` is the output of :func:`interactions`."""
    cos, had, cat = inter
    mu_q, mu_i = np.asarray(mu_q, float), np.asarray(mu_i, float)
    ranking = np.asarray(ranking, float).reshape(-1)
    d = len(mu_q)
    for name, seg, size in (("item", mu_i, d), ("hadamard", had, d), ("concat", cat, 2 * d)):
        if len(seg) != size:
            raise DimensionError(f"assemble: segment {name} has length {len(seg)}, expected {size}")
    return np.concatenate([mu_q, mu_i, [cos], had, cat, ranking])


def assemble_rows(Q, I, R):
    """Vectorized :func:`assemble` over a batch of rows."""
    if Q.shape != I.shape or Q.shape[0] != R.shape[0]:
        raise DimensionError(f"assemble_rows: Q {Q.shape}, I {I.shape}, R {R.shape}")
    return np.concatenate([Q, I, cosine_rows(Q, I)[:, None], Q * I, Q, I, R], axis=1)


def make_provider(cfg):
    """Provider from a features config section (see :class:`mlpr.config.FeatureConfig`)."""
    if cfg.mode == "hash-encoder":
        return HashEncoder(cfg.dim, cfg.encoder_seed), HashEncoder(cfg.dim, cfg.encoder_seed)
    if cfg.mode == "file-lookup":
        q = FileLookup.from_tsv(cfg.query_embeddings)
        i = FileLookup.from_tsv(cfg.item_embeddings)
        for p in (q, i):
            if p.dim != cfg.dim:
                raise DimensionError(f"embedding file has dim {p.dim}, config says {cfg.dim}")
        return q, i
    raise ValueError(f"unknown embedding mode {cfg.mode!r}")


def query_of(rec):
    return QueryRecord(rec.query_id, rec.query_text)


def item_of(rec):
    return ItemRecord(rec.item_id, rec.item_title, rec.item_type, rec.item_brand,
                      rec.item_color, rec.item_gender)


class FeatureTable:
    """Embeds each distinct query/item once and assembles rows on demand.

    Holding per-entity embeddings rather than full rows keeps a 50k-pair
    dataset at a few MB instead of materializing every concatenated row.
    """

    def __init__(self, records, query_provider, item_provider, stats: NormalizationStats,
                 query_cache=None, item_cache=None):
        self.query_cache = {} if query_cache is None else query_cache
        self.item_cache = {} if item_cache is None else item_cache
        q_rows, i_rows = [], []
        for r in records:
            if r.query_id not in self.query_cache:
                self.query_cache[r.query_id] = encode_query(query_provider, query_of(r))
            if r.item_id not in self.item_cache:
                self.item_cache[r.item_id] = encode_item(item_provider, item_of(r))
            q_rows.append(self.query_cache[r.query_id])
            i_rows.append(self.item_cache[r.item_id])
        dim = len(next(iter(self.query_cache.values()))) if self.query_cache else 0
        self.Q = np.array(q_rows).reshape(len(records), dim)
        self.I = np.array(i_rows).reshape(len(records), dim)
        R = np.array([r.features for r in records], dtype=np.float64)
        self.R = zscore_apply(stats, R.reshape(len(records), len(stats.mean)))
        self.layout = FeatureLayout(dim, self.R.shape[1])

    def __len__(self):
        return self.Q.shape[0]

    def rows(self, idx=None):
        if idx is None:
            return assemble_rows(self.Q, self.I, self.R)
        return assemble_rows(self.Q[idx], self.I[idx], self.R[idx])


def _identity_stats(records):
    n = len(records[0].features) if records else 0
    return NormalizationStats(np.zeros(n), np.ones(n), "identity")


def select_encoder_seed(records, dim, candidates, labels):
    """Pick the hash-encoder seed whose query/item cosine best ranks ``labels``.

    A cheap supervised probe used as a stand-in for encoder fine-tuning:
    returns ``(best_seed, {seed: probe_auc})``.
    """
    from .metrics import auc

    scores = {}
    for seed in candidates:
        enc = HashEncoder(dim, seed)
        table = FeatureTable(records, enc, enc, _identity_stats(records))
        scores[seed] = auc(cosine_rows(table.Q, table.I), labels)
    best = max(candidates, key=lambda s: (scores[s], -candidates.index(s)))
    return best, scores
