import json

import numpy as np
import pytest

from argctx.embeddings import (
    WordVectorTable,
    average_pool,
    load_precomputed,
    load_word_vectors,
    save_word_vectors,
)
from argctx.errors import DataError


def test_load_word_vectors_small_file(tmp_path):
    path = tmp_path / "vecs.txt"
    path.write_text("hello 1.0 2.0 3.0\nworld 0.5 -1.5 2.5\n")
    table = load_word_vectors(path)
    assert table.dim == 3
    assert len(table) == 2
    np.testing.assert_array_equal(table.lookup("hello"), [1.0, 2.0, 3.0])


def test_load_word_vectors_mixed_dims(tmp_path):
    path = tmp_path / "vecs.txt"
    path.write_text("a 1.0 2.0 3.0\nb 1.0 2.0 3.0 4.0\n")
    with pytest.raises(DataError, match="line 2.*expected 3"):
        load_word_vectors(path)


def test_load_word_vectors_non_numeric(tmp_path):
    path = tmp_path / "vecs.txt"
    path.write_text("a 1.0 x 3.0\n")
    with pytest.raises(DataError, match="non-numeric"):
        load_word_vectors(path)


def test_load_word_vectors_empty_file(tmp_path):
    path = tmp_path / "vecs.txt"
    path.write_text("")
    with pytest.raises(DataError, match="empty"):
        load_word_vectors(path)


def test_load_word_vectors_duplicate_keeps_first(tmp_path, caplog):
    path = tmp_path / "vecs.txt"
    path.write_text("a 1.0 2.0\na 9.0 9.0\n")
    with caplog.at_level("WARNING"):
        table = load_word_vectors(path)
    np.testing.assert_array_equal(table.lookup("a"), [1.0, 2.0])
    assert any("duplicate" in r.message for r in caplog.records)


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    table = WordVectorTable(
        dim=5, vectors={f"t{i}": rng.standard_normal(5) for i in range(4)}
    )
    path = tmp_path / "out.txt"
    save_word_vectors(table, path)
    again = load_word_vectors(path)
    assert again.dim == 5
    for tok, vec in table.vectors.items():
        np.testing.assert_array_equal(again.lookup(tok), vec)


def test_unknown_lookup_is_zero_and_counted():
    table = WordVectorTable(dim=3, vectors={"a": np.ones(3)})
    np.testing.assert_array_equal(table.lookup("zzz"), np.zeros(3))
    mat, oov = table.lookup_all(["a", "zzz", "a", "qqq"])
    assert mat.shape == (4, 3)
    assert oov == 2
    np.testing.assert_array_equal(mat[1], np.zeros(3))


def test_average_pool_identity_and_arithmetic():
    v = np.array([1.5, -2.0])
    np.testing.assert_array_equal(average_pool([v]), v)
    np.testing.assert_array_equal(
        average_pool([[1, 3], [3, 5]]), np.array([2.0, 4.0])
    )


def test_average_pool_matches_sum_oracle():
    rng = np.random.default_rng(1)
    vecs = [rng.standard_normal(768) for _ in range(10)]
    total = np.zeros(768)
    for v in vecs:
        total = total + v
    np.testing.assert_allclose(average_pool(vecs), total / 10, rtol=1e-12)


def test_average_pool_permutation_invariant_and_idempotent():
    rng = np.random.default_rng(2)
    vecs = [rng.standard_normal(6) for _ in range(5)]
    np.testing.assert_allclose(
        average_pool(vecs), average_pool(vecs[::-1]), atol=1e-15
    )
    v = rng.standard_normal(6)
    np.testing.assert_array_equal(average_pool([v, v, v]), v)


def test_average_pool_errors():
    with pytest.raises(DataError, match="empty"):
        average_pool([])
    with pytest.raises(DataError, match="identical length"):
        average_pool([np.ones(2), np.ones(3)])


def _write_embeddings(path, records):
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n")


def _records_for(corpus, dim=768, n_tokens=3):
    rng = np.random.default_rng(7)
    return [
        {
            "discussion_id": adu.discussion_id,
            "global_index": adu.global_index,
            "vectors": rng.standard_normal((n_tokens, dim)).tolist(),
        }
        for adu in corpus.all_adus()
    ]


def test_load_precomputed_covers_excerpt(excerpt_corpus, tmp_path):
    path = tmp_path / "emb.jsonl"
    records = _records_for(excerpt_corpus)
    _write_embeddings(path, records)
    emb = load_precomputed(path, excerpt_corpus)
    assert emb.dim == 768
    pooled = emb.pooled_vector("d01", 0)
    expected = np.asarray(records[0]["vectors"]).mean(axis=0)
    np.testing.assert_allclose(pooled, expected, atol=1e-15)


def test_load_precomputed_missing_adu(excerpt_corpus, tmp_path):
    path = tmp_path / "emb.jsonl"
    _write_embeddings(path, _records_for(excerpt_corpus)[:-1])
    with pytest.raises(DataError, match=r"missing.*'d01', 4"):
        load_precomputed(path, excerpt_corpus)


def test_load_precomputed_dangling_key(excerpt_corpus, tmp_path):
    path = tmp_path / "emb.jsonl"
    records = _records_for(excerpt_corpus)
    records.append({"discussion_id": "ghost", "global_index": 0,
                    "vectors": [[0.0] * 768]})
    _write_embeddings(path, records)
    with pytest.raises(DataError, match="references no corpus ADU"):
        load_precomputed(path, excerpt_corpus)


def test_load_precomputed_dim_mismatch(excerpt_corpus, tmp_path):
    path = tmp_path / "emb.jsonl"
    records = _records_for(excerpt_corpus)
    records[2]["vectors"] = [[0.0] * 767]
    _write_embeddings(path, records)
    with pytest.raises(DataError, match="767"):
        load_precomputed(path, excerpt_corpus)
