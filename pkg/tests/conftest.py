import numpy as np
import pytest

from gaug.data import flatten_extractor, make_vector_clusters
from gaug.embeddings import extract_embeddings
from gaug.gan import GeneratorAdapter
from gaug.knn import build_neighborhoods


@pytest.fixture(scope="session")
def small_dataset():
    return make_vector_clusters(60, 3, dim=6, seed=11)


@pytest.fixture(scope="session")
def small_store(small_dataset):
    return extract_embeddings(small_dataset, flatten_extractor)


@pytest.fixture(scope="session")
def small_index(small_store):
    return build_neighborhoods(small_store, 5)


def identity_adapter(dim: int, latent_scale: float = 0.0) -> GeneratorAdapter:
    """Oracle generator: returns the conditioning embedding reshaped into the
    sample, optionally nudged by the latent."""
    def generate_fn(z, h):
        return (h + latent_scale * z).reshape(1, 1, dim)

    return GeneratorAdapter(latent_dim=dim, conditioning_dim=dim,
                            class_conditional=False, sample_shape=(1, 1, dim),
                            generate_fn=generate_fn)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
