"""Dataset containers, synthetic toy datasets, and pluggable feature extractors.

Samples are channels-first ``C x H x W`` float arrays with values in [0, 1].
Extractors are plain callables ``sample -> 1-D feature vector``; the toolkit
never assumes a particular network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class Instance:
    """One datapoint: an id, a C x H x W sample, and an optional class label."""

    id: int
    sample: np.ndarray
    label: int | None = None

    def __post_init__(self):
        if self.id < 0:
            raise ValidationError(f"instance id must be non-negative, got {self.id}")
        if self.sample.ndim != 3:
            raise ValidationError(
                f"sample must be C x H x W, got shape {self.sample.shape}"
            )
        if not np.isfinite(self.sample).all():
            raise ValidationError(f"sample of instance {self.id} has non-finite values")


def check_dataset(dataset: list[Instance]) -> None:
    """Validate id uniqueness and the all-or-none labelling rule."""
    if not dataset:
        raise ValidationError("dataset is empty")
    ids = [inst.id for inst in dataset]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate instance ids in dataset")
    labelled = sum(inst.label is not None for inst in dataset)
    if labelled not in (0, len(dataset)):
        raise ValidationError("labels must be present for all instances or for none")


def dataset_labels(dataset: list[Instance]) -> np.ndarray | None:
    """Labels as an int array ordered by id, or None if the dataset is unlabelled."""
    if dataset[0].label is None:
        return None
    by_id = sorted(dataset, key=lambda inst: inst.id)
    return np.array([inst.label for inst in by_id], dtype=np.int64)


# ---------------------------------------------------------------------------
# Extractors


def channel_mean_extractor(sample: np.ndarray) -> np.ndarray:
    return sample.reshape(sample.shape[0], -1).mean(axis=1)


def flatten_extractor(sample: np.ndarray) -> np.ndarray:
    return sample.reshape(-1).astype(np.float64)


def make_projection_extractor(sample_shape: tuple[int, int, int], dim: int = 16,
                              seed: int = 0):
    """Flatten + fixed seeded random projection to ``dim`` features.

    Deterministic and label-correlated on the toy cluster data, which makes it
    the default desk-scale stand-in for a pretrained feature network.
    """
    rng = np.random.default_rng(seed)
    n_in = int(np.prod(sample_shape))
    proj = rng.standard_normal((n_in, dim)) / np.sqrt(n_in)

    def extract(sample: np.ndarray) -> np.ndarray:
        return sample.reshape(-1) @ proj

    return extract


# ---------------------------------------------------------------------------
# Toy datasets


def make_vector_clusters(n: int, n_classes: int, dim: int, seed: int,
                         spread: float = 0.04) -> list[Instance]:
    """Raw-vector Gaussian clusters packed as 1 x 1 x dim samples.

    Class centers are spaced on a low-discrepancy grid inside [0.15, 0.85]^dim
    so samples stay within [0, 1] after clipping; clusters are linearly
    separable by construction for reasonable ``spread``.
    """
    if n_classes < 1 or n < n_classes:
        raise ValidationError("need n >= n_classes >= 1")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.15, 0.85, size=(n_classes, dim))
    labels = np.arange(n) % n_classes
    rng.shuffle(labels)
    samples = centers[labels] + spread * rng.standard_normal((n, dim))
    samples = np.clip(samples, 0.0, 1.0)
    return [
        Instance(id=i, sample=samples[i].reshape(1, 1, dim).astype(np.float64),
                 label=int(labels[i]))
        for i in range(n)
    ]


def make_cluster_images(n: int, n_classes: int, seed: int,
                        shape: tuple[int, int, int] = (1, 8, 8),
                        spread: float = 0.05) -> list[Instance]:
    """Per-class blob patterns rendered into small C x H x W images.

    Each class owns a fixed random template in [0.2, 0.8]; samples are the
    template plus Gaussian pixel noise, clipped to [0, 1].
    """
    if n_classes < 1 or n < n_classes:
        raise ValidationError("need n >= n_classes >= 1")
    rng = np.random.default_rng(seed)
    templates = rng.uniform(0.2, 0.8, size=(n_classes, *shape))
    labels = np.arange(n) % n_classes
    rng.shuffle(labels)
    out = []
    for i in range(n):
        img = templates[labels[i]] + spread * rng.standard_normal(shape)
        out.append(Instance(id=i, sample=np.clip(img, 0.0, 1.0),
                            label=int(labels[i])))
    return out


def make_gaussian_mixture_2d(n: int, n_components: int, seed: int,
                             spread: float = 0.03) -> list[Instance]:
    """2-D Gaussian mixture as 1 x 1 x 2 samples, unlabelled.

    Component means sit on a circle inside the unit square; used by the toy
    adversarial trainer and its behavioural checks.
    """
    rng = np.random.default_rng(seed)
    angles = 2 * np.pi * np.arange(n_components) / n_components
    means = 0.5 + 0.3 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    comp = rng.integers(n_components, size=n)
    pts = means[comp] + spread * rng.standard_normal((n, 2))
    pts = np.clip(pts, 0.0, 1.0)
    return [Instance(id=i, sample=pts[i].reshape(1, 1, 2)) for i in range(n)]
