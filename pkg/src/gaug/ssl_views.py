"""Multi-view positive-pair construction for self-supervised training:
two main views with optional small crops, generated-view substitution, and
real-neighbor pairing.

Unlike the supervised batch gate, substitution here is a per-instance
Bernoulli(p_g) event, and it only ever touches main view 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Instance
from .embeddings import EmbeddingStore
from .errors import ValidationError
from .gan import GeneratorAdapter, TruncationPolicy, generate, sample_latent
from .knn import NeighborhoodIndex, sample_neighbor
from .transforms import Pipeline, apply_pipeline

REAL, GENERATED, NEIGHBOR = "REAL", "GENERATED", "NEIGHBOR"


@dataclass
class ViewSet:
    """Positive views of one instance: >= 2 main views plus optional small
    crops, each tagged with its provenance."""

    main_views: list[np.ndarray]
    small_views: list[np.ndarray]
    provenance: list[str]

    def __post_init__(self):
        if len(self.main_views) < 2:
            raise ValidationError("a view set needs at least 2 main views")
        if len(self.provenance) != len(self.main_views) + len(self.small_views):
            raise ValidationError("one provenance tag per view required")
        shapes = {v.shape for v in self.main_views}
        if len(shapes) != 1:
            raise ValidationError("main views must share one resolution")
        if self.small_views:
            small_shapes = {v.shape for v in self.small_views}
            if len(small_shapes) != 1:
                raise ValidationError("small views must share one resolution")


def make_views(x: Instance, pipeline: Pipeline, n_small: int,
               small_pipeline: Pipeline, rng: np.random.Generator) -> ViewSet:
    """Two independent main views plus n_small independent small views."""
    if n_small < 0:
        raise ValidationError("n_small must be >= 0")
    main = [apply_pipeline(pipeline, x.sample, rng) for _ in range(2)]
    small = [apply_pipeline(small_pipeline, x.sample, rng) for _ in range(n_small)]
    return ViewSet(main, small, [REAL] * (2 + n_small))


def substitute_generated_view(views: ViewSet, x: Instance, p_g: float,
                              truncation: TruncationPolicy,
                              adapter: GeneratorAdapter, store: EmbeddingStore,
                              pipeline_generated: Pipeline,
                              rng: np.random.Generator) -> ViewSet:
    """With probability p_g, replace main view 1 by a pipeline-transformed
    generation conditioned on x's embedding; view 2 and small views are
    never touched."""
    if x.id >= store.count:
        raise ValidationError(f"no embedding row for instance {x.id}")
    if rng.random() >= p_g:
        return views
    h = store.embeddings[x.id].astype(np.float64)
    z = sample_latent(adapter.latent_dim, truncation, rng)
    cls = x.label if adapter.class_conditional else None
    gen = apply_pipeline(pipeline_generated, generate(adapter, h, z, cls), rng)
    main = [gen] + views.main_views[1:]
    prov = [GENERATED] + views.provenance[1:]
    return ViewSet(main, views.small_views, prov)


def swav_nn_pair(x: Instance, index: NeighborhoodIndex, dataset: list[Instance],
                 p_g: float, pipeline: Pipeline,
                 rng: np.random.Generator) -> ViewSet:
    """Neighbor-paired views: with probability p_g, view 1 comes from a
    uniformly sampled precomputed neighbor of x instead of x itself; view 2
    is always a transform of x."""
    by_id = {inst.id: inst for inst in dataset}
    use_neighbor = rng.random() < p_g
    if use_neighbor:
        j = sample_neighbor(index, x.id, rng)
        view1 = apply_pipeline(pipeline, by_id[j].sample, rng)
    else:
        view1 = apply_pipeline(pipeline, x.sample, rng)
    view2 = apply_pipeline(pipeline, x.sample, rng)
    prov = [NEIGHBOR if use_neighbor else REAL, REAL]
    return ViewSet([view1, view2], [], prov)
