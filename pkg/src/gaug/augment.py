"""Generator-gated batch augmentation: soft labels, fixed-count substitution,
FID-based class filtering, and CutMix / MixUp mixing.

rng protocol: the batch assembler splits the Generator it receives into a
gate stream, a latent stream, and per-element transform streams (in that
order, via ``Generator.spawn``). The gate-free loader performs the same split
and uses only the transform streams, so a disabled gate (p_G = 0) reproduces
the plain loader bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Instance
from .embeddings import EmbeddingStore
from .errors import ValidationError
from .gan import GeneratorAdapter, TruncationPolicy, generate, sample_latent
from .knn import NeighborhoodIndex
from .transforms import Pipeline, apply_pipeline


# ---------------------------------------------------------------------------
# Soft labels


@dataclass(frozen=True)
class SoftLabelTable:
    """Row i = class histogram of instance i's neighborhood; entries are
    multiples of 1/k and each row sums to 1."""

    table: np.ndarray
    k: int

    def row(self, i: int) -> np.ndarray:
        return self.table[i]


def soft_labels(index: NeighborhoodIndex, labels: np.ndarray,
                n_classes: int) -> SoftLabelTable:
    """Neighborhood class histogram per instance: (1/k) sum of one-hots."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or len(labels) != index.count:
        raise ValidationError("labels must cover every id in the index")
    if n_classes <= int(labels.max()):
        raise ValidationError("n_classes must exceed the largest label")
    neighbor_labels = labels[index.neighbors]  # N x k
    counts = np.zeros((index.count, n_classes), dtype=np.int64)
    rows = np.repeat(np.arange(index.count), index.k)
    np.add.at(counts, (rows, neighbor_labels.ravel()), 1)
    return SoftLabelTable(counts / index.k, index.k)


def one_hot(label: int, n_classes: int) -> np.ndarray:
    out = np.zeros(n_classes)
    out[label] = 1.0
    return out


# ---------------------------------------------------------------------------
# Policy and gate


@dataclass(frozen=True)
class AugmentationPolicy:
    """Everything the batch gate needs: substitution probability p_g,
    truncation, the real-path pipeline and the generated-path pipeline, an
    optional per-class FID filter, and the soft-label switch."""

    p_g: float = 0.0
    truncation: TruncationPolicy = field(default_factory=TruncationPolicy)
    k: int = 50
    pipeline_real: Pipeline = field(default_factory=Pipeline)
    pipeline_generated: Pipeline | None = None  # None: same as pipeline_real
    fid_threshold: float | None = 150.0
    allowed_classes: frozenset[int] | None = None
    use_soft_labels: bool = True

    def __post_init__(self):
        if not 0.0 <= self.p_g <= 1.0:
            raise ValidationError(f"p_g must be in [0, 1], got {self.p_g}")
        if self.fid_threshold is not None and self.fid_threshold <= 0:
            raise ValidationError("fid_threshold must be positive")
        if (self.allowed_classes is None) != (self.fid_threshold is None):
            raise ValidationError(
                "allowed_classes must be present iff fid_threshold is set")

    @property
    def generated_pipeline(self) -> Pipeline:
        return self.pipeline_generated if self.pipeline_generated is not None \
            else self.pipeline_real


def fid_filter(per_class_fid: dict[int, float], threshold: float) -> frozenset[int]:
    """Classes whose FID is strictly below the threshold (default 150)."""
    for c, v in per_class_fid.items():
        if not np.isfinite(v) or v < 0:
            raise ValidationError(f"FID for class {c} must be finite and >= 0")
    return frozenset(c for c, v in per_class_fid.items() if v < threshold)


def select_augmented_indices(batch_size: int, p_g: float,
                             rng: np.random.Generator) -> np.ndarray:
    """Uniform random subset of {0..B-1} of size exactly ceil(B * p_g),
    returned sorted. The fixed count keeps downstream batch shapes static."""
    if batch_size < 1:
        raise ValidationError("batch_size must be >= 1")
    n_aug = math.ceil(batch_size * p_g)
    return np.sort(rng.choice(batch_size, size=n_aug, replace=False))


@dataclass
class LabeledBatch:
    samples: np.ndarray          # B x C x H x W
    labels: np.ndarray           # B x n_classes, row-stochastic
    augmented_mask: np.ndarray   # B bools, True where the gate substituted


def _split_streams(rng: np.random.Generator, batch_size: int):
    gate_rng, latent_rng, tf_root = rng.spawn(3)
    return gate_rng, latent_rng, tf_root.spawn(batch_size)


def da_icgan_augment_batch(batch_ids, dataset: list[Instance],
                           policy: AugmentationPolicy,
                           adapter: GeneratorAdapter | None,
                           store: EmbeddingStore | None,
                           soft_table: SoftLabelTable | None,
                           n_classes: int,
                           rng: np.random.Generator) -> LabeledBatch:
    """Assemble one training batch with generator substitution.

    ceil(B * p_g) elements are selected for substitution; selected elements
    whose class falls outside ``policy.allowed_classes`` (when the FID filter
    is active) revert to the real path. Substituted elements get the
    generated sample run through the generated-path pipeline and, when
    enabled, the soft label of their conditioning instance; everything else
    gets the real sample through the real-path pipeline and a one-hot label.
    """
    by_id = {inst.id: inst for inst in dataset}
    batch_ids = list(batch_ids)
    b = len(batch_ids)
    if policy.use_soft_labels and soft_table is None and policy.p_g > 0:
        raise ValidationError("use_soft_labels=True but no soft-label table given")
    gate_rng, latent_rng, tf_rngs = _split_streams(rng, b)

    chosen = set(select_augmented_indices(b, policy.p_g, gate_rng).tolist())
    if policy.allowed_classes is not None:
        chosen = {pos for pos in chosen
                  if by_id[batch_ids[pos]].label in policy.allowed_classes}

    if chosen and (adapter is None or store is None):
        raise ValidationError("gate is active but adapter/store missing")
    if chosen and store is not None and adapter is not None \
            and store.dim != adapter.conditioning_dim:
        raise ValidationError(
            f"store dim {store.dim} != adapter conditioning dim "
            f"{adapter.conditioning_dim}")

    samples = []
    labels = np.zeros((b, n_classes))
    mask = np.zeros(b, dtype=bool)
    for pos, inst_id in enumerate(batch_ids):
        inst = by_id[inst_id]
        if pos in chosen:
            h = store.embeddings[inst_id].astype(np.float64)
            z = sample_latent(adapter.latent_dim, policy.truncation, latent_rng)
            cls = inst.label if adapter.class_conditional else None
            raw = generate(adapter, h, z, cls)
            samples.append(apply_pipeline(policy.generated_pipeline, raw,
                                          tf_rngs[pos]))
            labels[pos] = soft_table.row(inst_id) if policy.use_soft_labels \
                else one_hot(inst.label, n_classes)
            mask[pos] = True
        else:
            samples.append(apply_pipeline(policy.pipeline_real, inst.sample,
                                          tf_rngs[pos]))
            labels[pos] = one_hot(inst.label, n_classes)
    return LabeledBatch(np.stack(samples), labels, mask)


def plain_real_batch(batch_ids, dataset: list[Instance], pipeline: Pipeline,
                     n_classes: int, rng: np.random.Generator) -> LabeledBatch:
    """Gate-free loader. Stream layout matches the gated assembler, so
    ``da_icgan_augment_batch`` with p_g = 0 emits an identical batch for the
    same rng state."""
    by_id = {inst.id: inst for inst in dataset}
    batch_ids = list(batch_ids)
    _, _, tf_rngs = _split_streams(rng, len(batch_ids))
    samples = [apply_pipeline(pipeline, by_id[i].sample, tf_rngs[pos])
               for pos, i in enumerate(batch_ids)]
    labels = np.stack([one_hot(by_id[i].label, n_classes) for i in batch_ids])
    return LabeledBatch(np.stack(samples), labels,
                        np.zeros(len(batch_ids), dtype=bool))


# ---------------------------------------------------------------------------
# CutMix / MixUp


def cutmix(x_a: np.ndarray, x_b: np.ndarray, y_a: np.ndarray, y_b: np.ndarray,
           rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Paste a random box from x_b into x_a; label weights follow the
    realized (clipped) pixel area exactly.

    Box law: lam ~ Beta(1,1), side lengths sqrt(1-lam) * (W, H), center
    uniform over the image, box clipped to bounds.
    """
    if x_a.shape != x_b.shape:
        raise ValidationError("cutmix inputs must share a shape")
    _, h, w = x_a.shape
    lam = rng.beta(1.0, 1.0)
    cut_h = int(round(h * np.sqrt(1.0 - lam)))
    cut_w = int(round(w * np.sqrt(1.0 - lam)))
    cy = int(rng.integers(0, h))
    cx = int(rng.integers(0, w))
    y0, y1 = np.clip([cy - cut_h // 2, cy + (cut_h + 1) // 2], 0, h)
    x0, x1 = np.clip([cx - cut_w // 2, cx + (cut_w + 1) // 2], 0, w)
    out = x_a.copy()
    out[:, y0:y1, x0:x1] = x_b[:, y0:y1, x0:x1]
    lam_real = 1.0 - (y1 - y0) * (x1 - x0) / (h * w)
    return out, lam_real * y_a + (1.0 - lam_real) * y_b


def mixup(x_a: np.ndarray, x_b: np.ndarray, y_a: np.ndarray, y_b: np.ndarray,
          lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise convex combination; the caller draws lam (Beta(alpha,
    alpha), alpha defaulting to 0.2 in the experiment config)."""
    if not 0.0 <= lam <= 1.0:
        raise ValidationError(f"lam must be in [0, 1], got {lam}")
    if x_a.shape != x_b.shape:
        raise ValidationError("mixup inputs must share a shape")
    return lam * x_a + (1 - lam) * x_b, lam * y_a + (1 - lam) * y_b


CUTMIX, MIXUP, NONE = "CUTMIX", "MIXUP", "NONE"


def cutmixup_select(rng: np.random.Generator) -> str:
    """Pick at most one mixing op: fair coin between the two candidates, then
    MixUp fires only 80% of the time when it is the candidate."""
    if rng.random() < 0.5:
        return CUTMIX
    return MIXUP if rng.random() < 0.8 else NONE


def apply_cutmixup(batch: LabeledBatch, rng: np.random.Generator,
                   mixup_alpha: float = 0.2) -> LabeledBatch:
    """Batch-level mixing after the gate: one op choice per batch, element b
    paired with element (b+1) mod B."""
    choice = cutmixup_select(rng)
    if choice == NONE:
        return batch
    b = batch.samples.shape[0]
    samples = np.empty_like(batch.samples)
    labels = np.empty_like(batch.labels)
    for i in range(b):
        j = (i + 1) % b
        if choice == CUTMIX:
            samples[i], labels[i] = cutmix(batch.samples[i], batch.samples[j],
                                           batch.labels[i], batch.labels[j], rng)
        else:
            lam = rng.beta(mixup_alpha, mixup_alpha)
            samples[i], labels[i] = mixup(batch.samples[i], batch.samples[j],
                                          batch.labels[i], batch.labels[j], lam)
    return LabeledBatch(samples, labels, batch.augmented_mask)
