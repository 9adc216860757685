"""Experiment configuration: JSON schema, validation, and construction of
the concrete objects (dataset, extractor, policy) a run needs.

Validation is strict: unknown keys anywhere in the document are rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from ..data import (channel_mean_extractor, flatten_extractor,
                    make_cluster_images, make_gaussian_mixture_2d,
                    make_projection_extractor, make_vector_clusters)
from ..augment import AugmentationPolicy
from ..errors import ValidationError
from ..gan import ToyGanConfig, TruncationPolicy
from ..transforms import pipeline_from_list


def _check_keys(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ValidationError(f"unknown keys in {where}: {sorted(unknown)}")


_DATASET_KEYS = {"kind", "n", "n_classes", "dim", "shape", "seed", "spread",
                 "holdout_fraction"}
_EXTRACTOR_KEYS = {"kind", "dim", "seed"}
_POLICY_KEYS = {"p_g", "truncation_sigma", "k", "pipeline_real",
                "pipeline_generated", "fid_threshold", "use_soft_labels",
                "cutmixup", "mixup_alpha"}
_TRAINING_KEYS = {"epochs", "batch_size", "learning_rate", "lr_milestones",
                  "lr_decay", "weight_decay", "label_smoothing", "seed",
                  "reference_batch"}
_GAN_KEYS = {"steps", "batch_size", "lr_g", "lr_d", "latent_dim",
             "loss_variant", "seed", "neighborhood_k", "hidden_g", "hidden_d",
             "class_conditional"}
_METRICS_KEYS = {"fid_on", "ris_on", "K", "q"}
_TOP_KEYS = {"dataset", "extractor", "policy", "training", "gan", "metrics",
             "output_dir"}


@dataclass
class ExperimentConfig:
    raw: dict  # the validated document, kept verbatim for report snapshots

    @property
    def dataset_cfg(self) -> dict:
        return self.raw["dataset"]

    @property
    def training(self) -> dict:
        return self.raw["training"]

    @property
    def metrics_cfg(self) -> dict:
        return {"fid_on": False, "ris_on": False, "K": 25, "q": 0.5,
                **self.raw.get("metrics", {})}

    @property
    def output_dir(self) -> str:
        return self.raw.get("output_dir", "runs")

    def make_dataset(self):
        d = self.dataset_cfg
        kind = d["kind"]
        if kind == "vector_clusters":
            return make_vector_clusters(d["n"], d["n_classes"], d.get("dim", 8),
                                        d["seed"], d.get("spread", 0.04))
        if kind == "cluster_images":
            return make_cluster_images(d["n"], d["n_classes"], d["seed"],
                                       tuple(d.get("shape", (1, 8, 8))),
                                       d.get("spread", 0.05))
        if kind == "gaussian_mixture_2d":
            return make_gaussian_mixture_2d(d["n"], d.get("n_classes", 5),
                                            d["seed"], d.get("spread", 0.03))
        raise ValidationError(f"unknown dataset kind {kind!r}")

    def holdout_split(self, dataset):
        """Deterministic train/eval split by id hash order."""
        frac = self.dataset_cfg.get("holdout_fraction", 0.25)
        n_hold = max(1, int(round(frac * len(dataset))))
        ordered = sorted(dataset, key=lambda inst: inst.id)
        # strided split keeps class balance for the round-robin toy labels
        hold_ids = {inst.id for inst in ordered[:: max(1, len(ordered) // n_hold)]}
        train = [i for i in ordered if i.id not in hold_ids]
        hold = [i for i in ordered if i.id in hold_ids]
        return train, hold

    def make_extractor(self):
        e = {"kind": "projection", "dim": 16, "seed": 0,
             **self.raw.get("extractor", {})}
        if e["kind"] == "flatten":
            return flatten_extractor
        if e["kind"] == "channel_mean":
            return channel_mean_extractor
        if e["kind"] == "projection":
            d = self.dataset_cfg
            shape = tuple(d["shape"]) if "shape" in d else (1, 1, d.get("dim", 8))
            return make_projection_extractor(shape, e["dim"], e["seed"])
        raise ValidationError(f"unknown extractor kind {e['kind']!r}")

    def make_policy(self, allowed_classes=None) -> AugmentationPolicy:
        p = self.raw.get("policy", {})
        sigma = p.get("truncation_sigma", 0.8)
        trunc = TruncationPolicy.disabled() if sigma is None \
            else TruncationPolicy(sigma)
        pipeline_real = pipeline_from_list(p.get("pipeline_real", []))
        pg_list = p.get("pipeline_generated")
        pipeline_generated = None if pg_list is None else pipeline_from_list(pg_list)
        threshold = p.get("fid_threshold")
        if threshold is not None and allowed_classes is None:
            raise ValidationError(
                "fid_threshold set but no per-class FID available to filter on")
        return AugmentationPolicy(
            p_g=p.get("p_g", 0.0),
            truncation=trunc,
            k=p.get("k", 50),
            pipeline_real=pipeline_real,
            pipeline_generated=pipeline_generated,
            fid_threshold=threshold,
            allowed_classes=None if threshold is None else frozenset(allowed_classes),
            use_soft_labels=p.get("use_soft_labels", True),
        )

    def make_gan_config(self) -> ToyGanConfig | None:
        g = self.raw.get("gan")
        if g is None:
            return None
        g = dict(g)
        for key in ("hidden_g", "hidden_d"):
            if key in g:
                g[key] = tuple(g[key])
        return ToyGanConfig(**g)


def validate_config(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ValidationError("config must be a JSON object")
    _check_keys(doc, _TOP_KEYS, "config")
    for section, keys in (("dataset", _DATASET_KEYS), ("extractor", _EXTRACTOR_KEYS),
                          ("policy", _POLICY_KEYS), ("training", _TRAINING_KEYS),
                          ("gan", _GAN_KEYS), ("metrics", _METRICS_KEYS)):
        if section in doc and doc[section] is not None:
            _check_keys(doc[section], keys, section)
    if "dataset" not in doc:
        raise ValidationError("config needs a dataset section")
    if "training" not in doc:
        raise ValidationError("config needs a training section")

    t = doc["training"]
    if t.get("epochs", 0) < 0:
        raise ValidationError("epochs must be >= 0")
    if t.get("batch_size", 32) < 1:
        raise ValidationError("batch_size must be >= 1")
    if not 0.0 <= t.get("label_smoothing", 0.0) < 1.0:
        raise ValidationError("label_smoothing must be in [0, 1)")

    p = doc.get("policy", {})
    if not 0.0 <= p.get("p_g", 0.0) <= 1.0:
        raise ValidationError(f"p_g must be in [0, 1], got {p.get('p_g')}")

    cfg = ExperimentConfig(raw=doc)
    # construct eagerly so structural errors surface before any compute
    cfg.make_extractor()
    cfg.make_gan_config()
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config does not parse: {exc}") from exc
    return validate_config(doc)
