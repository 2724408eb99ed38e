import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlpr.errors import DimensionError, MissingEmbeddingError
from mlpr.features import (
    FeatureLayout,
    FileLookup,
    HashEncoder,
    ItemRecord,
    QueryRecord,
    assemble,
    assemble_rows,
    encode_item,
    encode_query,
    interactions,
    save_embeddings_tsv,
    zscore_apply,
    zscore_fit,
)


def test_hash_encoder_is_deterministic_and_unit_norm():
    enc = HashEncoder(64, seed=3)
    q = QueryRecord("q1", "red running shoes")
    a, b = encode_query(enc, q), encode_query(enc, q)
    assert a.tobytes() == b.tobytes()
    assert abs(np.linalg.norm(a) - 1.0) < 1e-9


def test_items_differing_in_color_get_different_vectors():
    enc = HashEncoder(256, seed=0)
    a = encode_item(enc, ItemRecord("i", "trail shoe", "shoes", "acme", "red", "women"))
    b = encode_item(enc, ItemRecord("i", "trail shoe", "shoes", "acme", "blue", "women"))
    assert not np.array_equal(a, b)
    assert a.tobytes() == encode_item(enc, ItemRecord("i", "trail shoe", "shoes", "acme", "red",
                                                      "women")).tobytes()


def test_empty_optional_fields_keep_dimension():
    enc = HashEncoder(32, seed=1)
    item = ItemRecord("i", "kettle")
    assert item.text() == "kettle [sep]  [sep]  [sep]  [sep] "
    v = encode_item(enc, item)
    assert v.shape == (32,) and abs(np.linalg.norm(v) - 1) < 1e-9


def test_encoder_seed_changes_embedding():
    q = QueryRecord("q", "garden hose")
    assert not np.array_equal(encode_query(HashEncoder(64, 0), q), encode_query(HashEncoder(64, 1), q))


def test_file_lookup_returns_stored_vector(tmp_path):
    table = {"q1": np.array([0.1, -2.5, 1e-17]), "q2": np.array([1.0, 2.0, 3.0])}
    path = tmp_path / "emb.tsv"
    save_embeddings_tsv(path, table)
    fl = FileLookup.from_tsv(path)
    assert encode_query(fl, QueryRecord("q1", "ignored")).tobytes() == table["q1"].tobytes()
    with pytest.raises(MissingEmbeddingError) as info:
        encode_query(fl, QueryRecord("q9", "x"))
    assert info.value.key == "q9"


def test_interaction_examples():
    v = np.array([0.3, -1.2, 2.0])
    assert interactions(v, v)[0] == pytest.approx(1.0, abs=1e-15)
    assert interactions(v, -v)[0] == pytest.approx(-1.0, abs=1e-15)
    cos, had, cat = interactions([1.0, 0.0], [0.0, 1.0])
    assert cos == 0.0
    np.testing.assert_array_equal(had, [0, 0])
    np.testing.assert_array_equal(cat, [1, 0, 0, 1])


def test_zero_vector_cosine_warns_and_is_zero():
    with pytest.warns(RuntimeWarning):
        cos, _, _ = interactions([0.0, 0.0], [1.0, 0.0])
    assert cos == 0.0


def test_zscore_examples():
    s = zscore_fit(np.array([[1.0, 4.0], [2.0, 4.0], [3.0, 4.0]]))
    np.testing.assert_allclose(s.mean, [2.0, 4.0])
    np.testing.assert_allclose(s.std, [np.sqrt(2 / 3), 0.0])
    z = zscore_apply(s, np.array([[1.0, 4.0], [2.0, 4.0], [3.0, 4.0]]))
    np.testing.assert_allclose(z[:, 0], [-np.sqrt(1.5), 0, np.sqrt(1.5)], atol=1e-15)
    np.testing.assert_array_equal(z[:, 1], 0.0)
    with pytest.raises(DimensionError):
        zscore_apply(s, np.ones((2, 3)))


def test_zscore_matches_two_pass_recomputation():
    X = np.random.default_rng(4).normal(2.0, 3.0, (1000, 5))
    s = zscore_fit(X)
    for j in range(5):
        col = [float(x) for x in X[:, j]]
        mean = sum(col) / len(col)
        var = sum((x - mean) ** 2 for x in col) / len(col)
        assert abs(s.mean[j] - mean) < 1e-12
        assert abs(s.std[j] - var ** 0.5) < 1e-12


def test_assemble_length_and_zero_case():
    d, F = 4, 3
    z = np.zeros(d)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        row = assemble(z, z, interactions(z, z), np.zeros(F))
    assert row.shape == (5 * d + 1 + F,) == (24,)
    np.testing.assert_array_equal(row, 0.0)
    layout = FeatureLayout(d, F)
    assert layout.length == 24
    assert layout.segments["cosine"] == slice(8, 9)


def test_assemble_segment_mismatch_names_segment():
    with pytest.raises(DimensionError, match="item"):
        assemble(np.ones(4), np.ones(3), (0.0, np.ones(4), np.ones(8)), [])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 4), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_assemble_rows_matches_rowwise_assemble(d, F, n, seed):
    rng = np.random.default_rng(seed)
    Q, I, R = rng.normal(size=(n, d)), rng.normal(size=(n, d)), rng.normal(size=(n, F))
    rows = assemble_rows(Q, I, R)
    layout = FeatureLayout(d, F)
    for j in range(n):
        one = assemble(Q[j], I[j], interactions(Q[j], I[j]), R[j])
        np.testing.assert_allclose(rows[j], one, rtol=0, atol=1e-15)
        np.testing.assert_array_equal(layout.take(rows[j], "ranking"), R[j])
        np.testing.assert_array_equal(layout.take(rows[j], "concat"), np.concatenate([Q[j], I[j]]))
