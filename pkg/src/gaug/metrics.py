"""Evaluation metrics: accuracies (top-1, one-to-multi, per-class), Fréchet
distance between feature distributions (global and per-class), neighborhood
label corruption reporting, representation invariance scoring, and rank
correlations between per-class quantities.

All operations are pure functions over immutable inputs; reports serialize
to JSON with stable key ordering so they diff cleanly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .data import Instance
from .errors import NumericalFailure, ValidationError
from .gan import GeneratorAdapter, TruncationPolicy, generate, sample_latent

UNDEFINED = "undefined"  # sentinel for correlations with zero variance

# ---------------------------------------------------------------------------
# Accuracy


def top1_accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows whose argmax (lowest index on ties) hits the label."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ValidationError("logits must be B x C with C >= 2")
    if len(labels) != logits.shape[0]:
        raise ValidationError("one label per logit row required")
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def one_to_multi_accuracy(logits: np.ndarray, label_sets) -> float:
    """Row counts as correct when its argmax lies in the row's label set."""
    logits = np.asarray(logits)
    if len(label_sets) != logits.shape[0]:
        raise ValidationError("one label set per logit row required")
    preds = np.argmax(logits, axis=1)
    correct = 0
    for p, valid in zip(preds, label_sets):
        if not valid:
            raise ValidationError("empty label set")
        correct += int(p) in valid
    return correct / len(label_sets)


def per_class_accuracy(logits: np.ndarray, labels: np.ndarray) -> dict[int, float]:
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    preds = np.argmax(logits, axis=1)
    return {
        int(c): float(np.mean(preds[labels == c] == c))
        for c in np.unique(labels)
    }


# ---------------------------------------------------------------------------
# Fréchet distance


@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray
    covariance: np.ndarray
    count: int

    def __post_init__(self):
        cov = self.covariance
        if self.count < 2:
            raise ValidationError("need at least 2 samples for a covariance")
        if cov.shape != (self.mean.size, self.mean.size):
            raise ValidationError("covariance shape does not match the mean")
        if np.abs(cov - cov.T).max() > 1e-8:
            raise ValidationError("covariance is not symmetric")


def gaussian_stats(features: np.ndarray) -> GaussianStats:
    """Sample mean and unbiased sample covariance of an M x d matrix."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise ValidationError("need an M x d matrix with M >= 2")
    mean = features.mean(axis=0)
    centered = features - mean
    cov = centered.T @ centered / (features.shape[0] - 1)
    cov = (cov + cov.T) / 2.0
    return GaussianStats(mean, cov, features.shape[0])


def _sqrt_psd(mat: np.ndarray, rtol: float = 1e-6) -> np.ndarray:
    """Symmetric PSD square root by eigendecomposition; eigenvalues slightly
    below zero (within -rtol * lambda_max) are clamped, anything lower is a
    hard numerical failure."""
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    lam_max = max(float(vals.max()), 0.0)
    floor = -rtol * lam_max if lam_max > 0 else -rtol
    if vals.min() < floor:
        raise NumericalFailure(
            f"eigenvalue {vals.min():.3e} below tolerance {floor:.3e} "
            "in PSD square root")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid(a: GaussianStats, b: GaussianStats) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}), the square root
    taken through the symmetric conjugated form sqrt(S_a) S_b sqrt(S_a)."""
    if a.mean.size != b.mean.size:
        raise ValidationError("feature dimensions differ")
    diff = a.mean - b.mean
    sqrt_a = _sqrt_psd(a.covariance)
    inner = sqrt_a @ b.covariance @ sqrt_a
    cross = np.trace(_sqrt_psd(inner))
    value = float(diff @ diff + np.trace(a.covariance) + np.trace(b.covariance)
                  - 2.0 * cross)
    return max(value, 0.0)


MISSING = "missing"  # classes with < 2 members cannot be scored


def per_class_fid(dataset: list[Instance], labels: np.ndarray,
                  adapter: GeneratorAdapter, extractor,
                  truncation: TruncationPolicy,
                  rng: np.random.Generator) -> dict[int, float | str]:
    """Fréchet distance per class between the class's real features and
    features of generations conditioned on those same samples, one generation
    per real member (equal counts by construction)."""
    labels = np.asarray(labels)
    by_id = {inst.id: inst for inst in dataset}
    out: dict[int, float | str] = {}
    for c in sorted(int(c) for c in np.unique(labels)):
        ids = np.flatnonzero(labels == c)
        if ids.size < 2:
            out[c] = MISSING
            continue
        real_feats, gen_feats = [], []
        for i in ids:
            inst = by_id[int(i)]
            h = np.asarray(extractor(inst.sample), dtype=np.float64).reshape(-1)
            z = sample_latent(adapter.latent_dim, truncation, rng)
            cls = inst.label if adapter.class_conditional else None
            gen = generate(adapter, h, z, cls)
            real_feats.append(np.asarray(extractor(inst.sample)).reshape(-1))
            gen_feats.append(np.asarray(extractor(gen)).reshape(-1))
        assert len(gen_feats) == len(real_feats)
        out[c] = fid(gaussian_stats(np.stack(real_feats)),
                     gaussian_stats(np.stack(gen_feats)))
    return out


# ---------------------------------------------------------------------------
# Representation invariance


def top25_ris(reps: dict, k: int = 25, firing_quantile: float = 0.5) -> float:
    """Mean, over objects, of the average firing rate of each object's
    top-min(K, d) most frequently firing features.

    A feature fires on a row when its value is >= the feature's
    ``firing_quantile`` quantile over all rows pooled across objects. Feature
    ranking within an object breaks ties by ascending feature index.
    """
    if not reps:
        raise ValidationError("no objects given")
    mats = {name: np.asarray(m, dtype=np.float64) for name, m in reps.items()}
    for name, m in mats.items():
        if m.ndim != 2 or m.shape[0] < 2:
            raise ValidationError(
                f"object {name!r} needs >= 2 transform rows, got {m.shape}")
    pooled = np.vstack(list(mats.values()))
    thresholds = np.quantile(pooled, firing_quantile, axis=0)
    d = pooled.shape[1]
    top = min(k, d)
    scores = []
    for m in mats.values():
        fires = m >= thresholds  # rows x d
        freq = fires.mean(axis=0)
        order = np.argsort(-freq, kind="stable")[:top]
        scores.append(float(freq[order].mean()))
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# Correlation


def correlate(x: dict[int, float], y: dict[int, float]) -> dict[str, float | str]:
    """Pearson on raw values and Spearman (Pearson on average ranks) over the
    shared keys; zero-variance inputs yield the ``undefined`` sentinel."""
    keys = sorted(set(x) & set(y))
    if len(keys) < 3:
        raise ValidationError(f"need >= 3 shared keys, got {len(keys)}")
    xv = np.array([x[k] for k in keys], dtype=np.float64)
    yv = np.array([y[k] for k in keys], dtype=np.float64)

    def pearson(a, b):
        a = a - a.mean()
        b = b - b.mean()
        denom = np.sqrt((a @ a) * (b @ b))
        if denom == 0.0:
            return UNDEFINED
        return float(np.clip(a @ b / denom, -1.0, 1.0))

    return {
        "pearson": pearson(xv, yv),
        "spearman": pearson(rankdata(xv), rankdata(yv)),
    }


# ---------------------------------------------------------------------------
# Report


@dataclass
class MetricsReport:
    """Serializable bundle of global, per-class, invariance, and correlation
    metrics. Keys serialize in stable (ascending / alphabetical) order."""

    global_metrics: dict[str, float] = field(default_factory=dict)
    per_class: dict[int, dict[str, float | str | int]] = field(default_factory=dict)
    ris: dict[str, float] = field(default_factory=dict)
    correlations: dict[str, dict[str, float | str]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "correlations": {k: dict(sorted(v.items()))
                             for k, v in sorted(self.correlations.items())},
            "global": dict(sorted(self.global_metrics.items())),
            "per_class": {str(c): dict(sorted(self.per_class[c].items()))
                          for c in sorted(self.per_class)},
            "ris": dict(sorted(self.ris.items())),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            global_metrics=dict(d.get("global", {})),
            per_class={int(c): dict(v) for c, v in d.get("per_class", {}).items()},
            ris=dict(d.get("ris", {})),
            correlations={k: dict(v) for k, v in d.get("correlations", {}).items()},
        )
