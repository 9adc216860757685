import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gaug.embeddings import EmbeddingStore
from gaug.errors import ValidationError
from gaug.knn import (build_neighborhoods, nn_corruption, sample_neighbor,
                      _select_topk_numpy)


def _store(arr):
    return EmbeddingStore(np.asarray(arr, dtype=np.float32))


def brute_force_index(emb, k):
    """Independent exhaustive scan: raw dot / norms, lexsort ordering."""
    emb = emb.astype(np.float64)
    norms = np.linalg.norm(emb, axis=1)
    n = emb.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        sims = emb @ emb[i] / (norms * norms[i])
        out[i] = np.lexsort((np.arange(n), -sims))[:k]
    return out


def test_orthogonal_basis_self_neighbor():
    idx = build_neighborhoods(_store(np.eye(4)), 1)
    np.testing.assert_array_equal(idx.neighbors[:, 0], np.arange(4))


def test_cosine_ignores_magnitude():
    idx = build_neighborhoods(_store([[1, 0], [2, 0], [0, 1]]), 2)
    np.testing.assert_array_equal(idx.neighbors[0], [0, 1])


def test_k_out_of_range(small_store):
    with pytest.raises(ValidationError):
        build_neighborhoods(small_store, small_store.count + 1)
    with pytest.raises(ValidationError):
        build_neighborhoods(small_store, 0)


def test_matches_brute_force_with_duplicates(rng):
    emb = rng.standard_normal((200, 16)).astype(np.float32)
    emb[17] = emb[3]
    emb[99] = emb[3]
    store = EmbeddingStore(emb)
    idx = build_neighborhoods(store, 7)
    np.testing.assert_array_equal(idx.neighbors, brute_force_index(emb, 7))


def test_numba_and_numpy_paths_identical(rng, monkeypatch):
    emb = rng.standard_normal((120, 8)).astype(np.float32)
    emb[40] = emb[2]
    store = EmbeddingStore(emb)
    idx_default = build_neighborhoods(store, 9)
    monkeypatch.setenv("GAUG_DISABLE_NUMBA", "1")
    idx_numpy = build_neighborhoods(store, 9)
    np.testing.assert_array_equal(idx_default.neighbors, idx_numpy.neighbors)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 40), d=st.integers(1, 8), seed=st.integers(0, 2**31))
def test_brute_force_property(n, d, seed):
    rng = np.random.default_rng(seed)
    emb = rng.standard_normal((n, d)).astype(np.float32)
    emb[np.linalg.norm(emb, axis=1) == 0] = 1.0
    k = int(rng.integers(1, n + 1))
    idx = build_neighborhoods(EmbeddingStore(emb), k)
    np.testing.assert_array_equal(idx.neighbors, brute_force_index(emb, k))


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 30), seed=st.integers(0, 2**31))
def test_positive_row_scaling_invariance(n, seed):
    rng = np.random.default_rng(seed)
    emb = rng.standard_normal((n, 6)).astype(np.float32)
    k = int(rng.integers(1, n + 1))
    base = build_neighborhoods(EmbeddingStore(emb), k)
    scaled = emb.copy()
    row = int(rng.integers(n))
    scaled[row] *= np.float32(2.0 ** rng.integers(-3, 4))  # exact power of two
    again = build_neighborhoods(EmbeddingStore(scaled), k)
    np.testing.assert_array_equal(base.neighbors, again.neighbors)


def test_sample_neighbor_k1():
    idx = build_neighborhoods(_store(np.eye(3)), 1)
    rng = np.random.default_rng(0)
    assert all(sample_neighbor(idx, 2, rng) == 2 for _ in range(10))


def test_sample_neighbor_uniform(small_index):
    rng = np.random.default_rng(9)
    draws = np.array([sample_neighbor(small_index, 0, rng) for _ in range(20000)])
    k = small_index.k
    counts = np.array([(draws == j).sum() for j in small_index.neighbors[0]])
    # chi-square against uniform, 4 dof, generous cutoff
    chi2 = (((counts - len(draws) / k) ** 2) / (len(draws) / k)).sum()
    assert counts.sum() == len(draws)
    assert chi2 < 20.0


def test_sample_neighbor_deterministic(small_index):
    r1, r2 = np.random.default_rng(5), np.random.default_rng(5)
    s1 = [sample_neighbor(small_index, 3, r1) for _ in range(50)]
    s2 = [sample_neighbor(small_index, 3, r2) for _ in range(50)]
    assert s1 == s2


def test_corruption_pure_neighborhoods():
    emb = np.array([[1, 0], [1, 0.01], [0, 1], [0.01, 1]], dtype=np.float32)
    idx = build_neighborhoods(EmbeddingStore(emb), 2)
    corr = nn_corruption(idx, np.array([0, 0, 1, 1]))
    assert corr == {0: 0.0, 1: 0.0}


def test_corruption_fraction_arithmetic():
    # one anchor with 10 of 50 neighbors foreign
    labels = np.zeros(51, dtype=int)
    labels[:10] = 1  # ids 0..9 are foreign to a class-0 anchor
    from gaug.knn import NeighborhoodIndex
    idx = NeighborhoodIndex(np.vstack([np.arange(50)] * 51))
    corr = nn_corruption(idx, labels)
    # class-0 datapoints see 10 foreign labels among their 50 neighbors
    assert corr[0] == pytest.approx(10 / 50)


def test_corruption_matches_enumeration(rng):
    emb = rng.standard_normal((300, 8)).astype(np.float32)
    labels = rng.integers(0, 4, size=300)
    idx = build_neighborhoods(EmbeddingStore(emb), 9)
    got = nn_corruption(idx, labels)
    per_point = np.array([
        sum(labels[j] != labels[i] for j in idx.neighbors[i]) / idx.k
        for i in range(300)
    ])
    for c in range(4):
        assert got[c] == pytest.approx(per_point[labels == c].mean())
    assert all(0.0 <= v <= 1.0 for v in got.values())


def test_corruption_label_coverage(small_index):
    with pytest.raises(ValidationError):
        nn_corruption(small_index, np.zeros(3, dtype=int))
