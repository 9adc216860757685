import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gaug.augment import (AugmentationPolicy, LabeledBatch, apply_cutmixup,
                          cutmix, cutmixup_select, da_icgan_augment_batch,
                          fid_filter, mixup, one_hot, plain_real_batch,
                          select_augmented_indices, soft_labels, CUTMIX, MIXUP,
                          NONE)
from gaug.data import make_vector_clusters
from gaug.errors import ValidationError
from gaug.gan import TruncationPolicy
from gaug.knn import NeighborhoodIndex
from gaug.transforms import Pipeline, Transform

from conftest import identity_adapter


# -- soft labels -------------------------------------------------------------


def test_soft_labels_pure_neighborhood():
    idx = NeighborhoodIndex(np.array([[0, 1], [1, 0]]))
    table = soft_labels(idx, np.array([3, 3]), 4)
    np.testing.assert_array_equal(table.row(0), [0, 0, 0, 1])


def test_soft_labels_eq_histogram():
    idx = NeighborhoodIndex(np.array([[0, 1, 2, 3]] * 4))
    table = soft_labels(idx, np.array([0, 0, 1, 2]), 3)
    np.testing.assert_allclose(table.row(0), [0.5, 0.25, 0.25])


def test_soft_labels_match_counting_oracle(rng):
    n, k, c = 500, 50, 7
    neighbors = np.stack([rng.permutation(n)[:k] for _ in range(n)])
    idx = NeighborhoodIndex(neighbors)
    labels = rng.integers(0, c, size=n)
    table = soft_labels(idx, labels, c)
    for i in rng.integers(0, n, size=30):
        tally = np.zeros(c)
        for j in neighbors[i]:
            tally[labels[j]] += 1
        np.testing.assert_allclose(table.row(i), tally / k)
    sums = table.table.sum(axis=1)
    np.testing.assert_allclose(sums, 1.0, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(2, 30), k=st.integers(1, 10), c=st.integers(2, 6),
       seed=st.integers(0, 2**31))
def test_soft_label_rows_are_multiples_of_inv_k(n, k, c, seed):
    rng = np.random.default_rng(seed)
    k = min(k, n)
    neighbors = np.stack([rng.permutation(n)[:k] for _ in range(n)])
    table = soft_labels(NeighborhoodIndex(neighbors),
                        rng.integers(0, c, size=n), c)
    assert (table.table >= 0).all()
    np.testing.assert_allclose(table.table.sum(axis=1), 1.0, atol=1e-9)
    multiples = table.table * k
    np.testing.assert_allclose(multiples, np.round(multiples), atol=1e-9)


def test_soft_labels_missing_coverage():
    idx = NeighborhoodIndex(np.array([[0, 1], [1, 0]]))
    with pytest.raises(ValidationError):
        soft_labels(idx, np.array([0]), 2)


# -- gate selection ----------------------------------------------------------


def test_gate_count_exact():
    rng = np.random.default_rng(0)
    assert len(select_augmented_indices(64, 0.5, rng)) == 32
    assert len(select_augmented_indices(10, 0.33, rng)) == 4
    assert len(select_augmented_indices(5, 0.0, rng)) == 0
    assert len(select_augmented_indices(5, 1.0, rng)) == 5


def test_gate_selection_uniform():
    rng = np.random.default_rng(1)
    counts = np.zeros(16)
    trials = 40_000
    for _ in range(trials):
        counts[select_augmented_indices(16, 0.25, rng)] += 1
    np.testing.assert_allclose(counts / trials, 0.25, atol=0.01)


# -- batch gate --------------------------------------------------------------


@pytest.fixture(scope="module")
def gate_setup():
    ds = make_vector_clusters(40, 4, dim=5, seed=21)
    from gaug.data import flatten_extractor
    from gaug.embeddings import extract_embeddings
    from gaug.knn import build_neighborhoods
    store = extract_embeddings(ds, flatten_extractor)
    index = build_neighborhoods(store, 4)
    labels = np.array([inst.label for inst in sorted(ds, key=lambda i: i.id)])
    table = soft_labels(index, labels, 4)
    return ds, store, index, table


def test_pg_zero_equals_plain_loader(gate_setup):
    ds, store, index, table = gate_setup
    pipeline = Pipeline([Transform("HFLIP", p=0.5), Transform("RRCROP", p=1.0)])
    policy = AugmentationPolicy(p_g=0.0, pipeline_real=pipeline,
                                fid_threshold=None, allowed_classes=None)
    ids = list(range(16))
    gated = da_icgan_augment_batch(ids, ds, policy, identity_adapter(5), store,
                                   table, 4, np.random.default_rng(77))
    plain = plain_real_batch(ids, ds, pipeline, 4, np.random.default_rng(77))
    assert gated.samples.tobytes() == plain.samples.tobytes()
    assert gated.labels.tobytes() == plain.labels.tobytes()
    assert not gated.augmented_mask.any()


def test_pg_one_oracle_adapter(gate_setup):
    ds, store, index, table = gate_setup
    policy = AugmentationPolicy(p_g=1.0, truncation=TruncationPolicy(0.8),
                                fid_threshold=None, allowed_classes=None,
                                use_soft_labels=True)
    adapter = identity_adapter(5)  # ignores z: output = h exactly
    ids = [3, 7, 9]
    batch = da_icgan_augment_batch(ids, ds, policy, adapter, store, table, 4,
                                   np.random.default_rng(5))
    assert batch.augmented_mask.all()
    for pos, i in enumerate(ids):
        np.testing.assert_allclose(
            batch.samples[pos].reshape(-1),
            store.embeddings[i].astype(np.float64), rtol=1e-6)
        np.testing.assert_array_equal(batch.labels[pos], table.row(i))


def test_hard_labels_when_soft_disabled(gate_setup):
    ds, store, index, table = gate_setup
    policy = AugmentationPolicy(p_g=1.0, fid_threshold=None,
                                allowed_classes=None, use_soft_labels=False)
    ids = [0, 1]
    batch = da_icgan_augment_batch(ids, ds, policy, identity_adapter(5), store,
                                   None, 4, np.random.default_rng(2))
    by_id = {inst.id: inst for inst in ds}
    for pos, i in enumerate(ids):
        np.testing.assert_array_equal(batch.labels[pos],
                                      one_hot(by_id[i].label, 4))


def test_fid_filter_reversion(gate_setup):
    ds, store, index, table = gate_setup
    by_id = {inst.id: inst for inst in ds}
    class7 = [i for i in by_id if by_id[i].label == 2][:8]
    policy = AugmentationPolicy(p_g=1.0, fid_threshold=10.0,
                                allowed_classes=frozenset({0, 1, 3}))
    batch = da_icgan_augment_batch(class7, ds, policy, identity_adapter(5),
                                   store, table, 4, np.random.default_rng(4))
    assert not batch.augmented_mask.any()  # everything reverted
    mixed = class7[:4] + [i for i in by_id if by_id[i].label == 0][:4]
    batch = da_icgan_augment_batch(mixed, ds, policy, identity_adapter(5),
                                   store, table, 4, np.random.default_rng(4))
    assert batch.augmented_mask.sum() == 4


def test_missing_soft_table_rejected(gate_setup):
    ds, store, index, table = gate_setup
    policy = AugmentationPolicy(p_g=1.0, fid_threshold=None,
                                allowed_classes=None, use_soft_labels=True)
    with pytest.raises(ValidationError):
        da_icgan_augment_batch([0], ds, policy, identity_adapter(5), store,
                               None, 4, np.random.default_rng(0))


def test_adapter_store_dim_mismatch(gate_setup):
    ds, store, index, table = gate_setup
    policy = AugmentationPolicy(p_g=1.0, fid_threshold=None,
                                allowed_classes=None)
    with pytest.raises(ValidationError, match="dim"):
        da_icgan_augment_batch([0], ds, policy, identity_adapter(9), store,
                               table, 4, np.random.default_rng(0))


# -- fid filter --------------------------------------------------------------


def test_fid_filter_strict_inequality():
    assert fid_filter({0: 40.0, 1: 150.0, 2: 149.9}, 150.0) == {0, 2}


def test_fid_filter_disabled_and_empty():
    assert fid_filter({0: 1.0, 1: 2.0}, math.inf) == {0, 1}
    assert fid_filter({0: 500.0, 1: 900.0}, 150.0) == frozenset()
    with pytest.raises(ValidationError):
        fid_filter({0: -1.0}, 150.0)


# -- mixing ------------------------------------------------------------------


def test_cutmix_area_arithmetic(rng):
    x_a = np.zeros((1, 8, 8))
    x_b = np.ones((1, 8, 8))
    y_a, y_b = one_hot(0, 2), one_hot(1, 2)
    for _ in range(200):
        out, label = cutmix(x_a, x_b, y_a, y_b, rng)
        frac_b = out.mean()  # pasted pixels are exactly the 1s
        np.testing.assert_allclose(label, [1 - frac_b, frac_b], atol=1e-12)
        assert label.sum() == pytest.approx(1.0)


def test_cutmix_shape_mismatch(rng):
    with pytest.raises(ValidationError):
        cutmix(np.zeros((1, 4, 4)), np.zeros((1, 5, 5)), one_hot(0, 2),
               one_hot(1, 2), rng)


def test_mixup_endpoints_and_midpoint():
    x_a, x_b = np.zeros((1, 2, 2)), np.ones((1, 2, 2))
    y_a, y_b = one_hot(0, 2), one_hot(1, 2)
    out, lab = mixup(x_a, x_b, y_a, y_b, 1.0)
    np.testing.assert_array_equal(out, x_a)
    np.testing.assert_array_equal(lab, y_a)
    out, lab = mixup(x_a, x_b, y_a, y_b, 0.5)
    np.testing.assert_allclose(out, 0.5)
    np.testing.assert_allclose(lab, [0.5, 0.5])
    with pytest.raises(ValidationError):
        mixup(x_a, x_b, y_a, y_b, 1.5)


def test_mixup_elementwise_exact(rng):
    for lam in np.linspace(0, 1, 7):
        a, b = rng.random((2, 3, 3)), rng.random((2, 3, 3))
        ya, yb = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
        out, lab = mixup(a, b, ya, yb, float(lam))
        np.testing.assert_array_equal(out, lam * a + (1 - lam) * b)
        np.testing.assert_array_equal(lab, lam * ya + (1 - lam) * yb)


def test_cutmixup_selection_frequencies():
    rng = np.random.default_rng(123)
    n = 200_000
    draws = [cutmixup_select(rng) for _ in range(n)]
    assert draws.count(CUTMIX) / n == pytest.approx(0.5, abs=0.01)
    assert draws.count(MIXUP) / n == pytest.approx(0.4, abs=0.01)
    assert draws.count(NONE) / n == pytest.approx(0.1, abs=0.01)


def test_cutmixup_reproducible():
    a = [cutmixup_select(np.random.default_rng(7)) for _ in range(1)]
    r1, r2 = np.random.default_rng(7), np.random.default_rng(7)
    assert [cutmixup_select(r1) for _ in range(100)] == \
        [cutmixup_select(r2) for _ in range(100)]


def test_apply_cutmixup_labels_stochastic(rng):
    batch = LabeledBatch(rng.random((6, 1, 4, 4)),
                         np.stack([one_hot(i % 3, 3) for i in range(6)]),
                         np.zeros(6, dtype=bool))
    out = apply_cutmixup(batch, rng)
    np.testing.assert_allclose(out.labels.sum(axis=1), 1.0, atol=1e-12)


def test_policy_validation():
    with pytest.raises(ValidationError):
        AugmentationPolicy(p_g=1.2, fid_threshold=None, allowed_classes=None)
    with pytest.raises(ValidationError):
        AugmentationPolicy(p_g=0.5, fid_threshold=None,
                           allowed_classes=frozenset({1}))
    with pytest.raises(ValidationError):
        AugmentationPolicy(p_g=0.5, fid_threshold=100.0, allowed_classes=None)
