"""Exact cosine k-nearest-neighbor index over an embedding store.

The similarity matrix is always computed as one float64 matmul over
row-normalized embeddings (chunked over queries at a fixed width so results
do not depend on N). Only the top-k selection step is a hot kernel: it runs
through a numba ``@njit`` routine by default, or a pure-numpy stable argsort
when the ``GAUG_DISABLE_NUMBA`` environment variable is set to a non-empty
value. Both paths produce bit-identical indexes: they rank by descending
similarity with ties broken by ascending id, on the same float64 inputs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingStore
from .errors import ValidationError

_CHUNK = 512


def numba_enabled() -> bool:
    return not os.environ.get("GAUG_DISABLE_NUMBA")


def _select_topk_numpy(sims: np.ndarray, k: int) -> np.ndarray:
    # stable argsort on -sims: descending similarity, ascending id on ties
    order = np.argsort(-sims, axis=1, kind="stable")
    return order[:, :k]


try:
    from numba import njit, prange

    @njit(cache=True, parallel=True)
    def _select_topk_numba(sims, k):  # pragma: no cover - exercised via dispatch
        n_rows, n = sims.shape
        out = np.empty((n_rows, k), dtype=np.int64)
        for r in prange(n_rows):
            top_val = np.empty(k, dtype=np.float64)
            top_idx = np.empty(k, dtype=np.int64)
            size = 0
            for j in range(n):
                v = sims[r, j]
                if size == k and v <= top_val[k - 1]:
                    # equal to the current cutoff loses: j is larger than any
                    # stored id with the same value (scan order is ascending)
                    continue
                pos = size if size < k else k - 1
                while pos > 0 and top_val[pos - 1] < v:
                    if pos < k:
                        top_val[pos] = top_val[pos - 1]
                        top_idx[pos] = top_idx[pos - 1]
                    pos -= 1
                top_val[pos] = v
                top_idx[pos] = j
                if size < k:
                    size += 1
            out[r, :] = top_idx
        return out

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False


def _select_topk(sims: np.ndarray, k: int) -> np.ndarray:
    if _HAVE_NUMBA and numba_enabled():
        return _select_topk_numba(sims, k)
    return _select_topk_numpy(sims, k)


@dataclass(frozen=True)
class NeighborhoodIndex:
    """Per-instance ordered ids of the k most cosine-similar instances.

    Row i is sorted by descending similarity with ties broken by ascending
    id; the instance itself participates in its own candidate set, so exact
    duplicates (and the instance itself) appear at the front.
    """

    neighbors: np.ndarray

    def __post_init__(self):
        nb = self.neighbors
        if nb.ndim != 2:
            raise ValidationError("neighbors must be N x k")
        if nb.size and (nb.min() < 0 or nb.max() >= nb.shape[0]):
            raise ValidationError("neighbor ids out of range")

    @property
    def count(self) -> int:
        return self.neighbors.shape[0]

    @property
    def k(self) -> int:
        return self.neighbors.shape[1]


def build_neighborhoods(store: EmbeddingStore, k: int) -> NeighborhoodIndex:
    """Exhaustive exact cosine k-NN scan."""
    n = store.count
    if not 1 <= k <= n:
        raise ValidationError(f"k must be in [1, {n}], got {k}")
    emb = store.embeddings.astype(np.float64)
    normed = emb / np.linalg.norm(emb, axis=1, keepdims=True)
    rows = []
    for start in range(0, n, _CHUNK):
        sims = normed[start : start + _CHUNK] @ normed.T
        rows.append(_select_topk(sims, k))
    return NeighborhoodIndex(np.concatenate(rows, axis=0))


def sample_neighbor(index: NeighborhoodIndex, i: int, rng: np.random.Generator) -> int:
    """Uniform draw from neighborhood i; deterministic given the rng state."""
    if not 0 <= i < index.count:
        raise ValidationError(f"instance id {i} out of range")
    return int(index.neighbors[i, rng.integers(index.k)])


def nn_corruption(index: NeighborhoodIndex, labels: np.ndarray) -> dict[int, float]:
    """Per-class mean fraction of neighbors whose label differs from the anchor's.

    For datapoint i the corruption is (# neighbors with a different label) / k;
    the per-class value averages this over all datapoints of the class.
    """
    labels = np.asarray(labels)
    if labels.ndim != 1 or len(labels) != index.count:
        raise ValidationError("labels must cover every id in the index")
    neighbor_labels = labels[index.neighbors]
    frac = (neighbor_labels != labels[:, None]).mean(axis=1)
    return {
        int(c): float(frac[labels == c].mean())
        for c in np.unique(labels)
    }
