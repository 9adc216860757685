"""Experiment orchestration: augmented classifier training, evaluation, and
the end-to-end run (embed -> index -> optional adversarial training -> train
-> eval -> report files).

Reports are deterministic given (config, seed); wall-clock timings are the
only nondeterministic content and live under their own "timings" key.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..augment import (AugmentationPolicy, apply_cutmixup,
                       da_icgan_augment_batch, fid_filter, soft_labels)
from ..data import dataset_labels
from ..embeddings import extract_embeddings, persist_store
from ..errors import GaugError, ValidationError
from ..gan import save_checkpoint, train_icgan
from ..knn import build_neighborhoods, nn_corruption
from ..metrics import (MetricsReport, correlate, per_class_accuracy,
                       per_class_fid, top1_accuracy, top25_ris, MISSING)
from ..transforms import apply_pipeline
from .classifier import LinearClassifier, smooth_labels, step_lr
from .config import ExperimentConfig, load_config


class StageFailure(GaugError):
    """A named pipeline stage failed; the original error is chained."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        super().__init__(f"stage {stage!r} failed: {cause}")


@dataclass
class RunReport:
    config_snapshot: dict
    epoch_losses: list[float] = field(default_factory=list)
    epoch_accuracies: list[float] = field(default_factory=list)
    gan_loss_trace: list[tuple[float, float]] = field(default_factory=list)
    metrics: MetricsReport | None = None
    seeds: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config_snapshot,
            "epoch_accuracies": self.epoch_accuracies,
            "epoch_losses": self.epoch_losses,
            "gan_loss_trace": [list(t) for t in self.gan_loss_trace],
            "metrics": self.metrics.to_dict() if self.metrics else None,
            "seeds": self.seeds,
            "timings": self.timings,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _effective_lr(training: dict) -> float:
    lr = training.get("learning_rate", 0.1)
    ref = training.get("reference_batch")
    if ref:
        lr = lr * training.get("batch_size", 32) / ref
    return lr


def train_classifier(cfg: ExperimentConfig, dataset, store, index, adapter,
                     policy: AugmentationPolicy | None = None,
                     train_ids=None) -> tuple[LinearClassifier, RunReport]:
    """Epochs of gate-augmented minibatches against the smoothed
    cross-entropy; returns the trained model and a report with the loss and
    train-accuracy trace."""
    training = cfg.training
    policy = policy if policy is not None else cfg.make_policy()
    labels = dataset_labels(dataset)
    if labels is None:
        raise ValidationError("classifier training needs a labelled dataset")
    n_classes = int(labels.max()) + 1
    soft_table = soft_labels(index, labels, n_classes) \
        if policy.use_soft_labels else None
    pol_raw = cfg.raw.get("policy", {})
    use_cutmixup = bool(pol_raw.get("cutmixup", False))
    mixup_alpha = pol_raw.get("mixup_alpha", 0.2)
    smoothing = training.get("label_smoothing", 0.0)
    weight_decay = training.get("weight_decay", 0.0)
    milestones = training.get("lr_milestones", [])
    decay = training.get("lr_decay", 0.1)
    base_lr = _effective_lr(training)
    batch_size = training.get("batch_size", 32)
    epochs = training.get("epochs", 0)
    seed = training.get("seed", 0)

    by_id = {inst.id: inst for inst in dataset}
    all_ids = np.array(sorted(by_id)) if train_ids is None \
        else np.asarray(sorted(train_ids))
    n_features = int(np.prod(dataset[0].sample.shape))
    model = LinearClassifier.init(n_features, n_classes, seed)
    report = RunReport(config_snapshot=cfg.raw, seeds={"training": seed})

    rng = np.random.default_rng(seed)
    for epoch in range(epochs):
        lr = step_lr(base_lr, epoch, milestones, decay)
        perm = rng.permutation(all_ids)
        losses, accs = [], []
        for start in range(0, len(perm), batch_size):
            ids = perm[start : start + batch_size].tolist()
            batch_rng, mix_rng = rng.spawn(2)
            batch = da_icgan_augment_batch(ids, dataset, policy, adapter,
                                           store, soft_table, n_classes,
                                           batch_rng)
            if use_cutmixup:
                batch = apply_cutmixup(batch, mix_rng, mixup_alpha)
            targets = smooth_labels(batch.labels, smoothing)
            losses.append(model.update(batch.samples, targets, lr, weight_decay))
            hard = np.array([by_id[i].label for i in ids])
            accs.append(top1_accuracy(model.predict_logits(batch.samples), hard))
        report.epoch_losses.append(float(np.mean(losses)))
        report.epoch_accuracies.append(float(np.mean(accs)))
    return model, report


def evaluate(model: LinearClassifier, dataset, cfg: ExperimentConfig,
             store=None, index=None, adapter=None, extractor=None,
             policy: AugmentationPolicy | None = None,
             eval_ids=None) -> MetricsReport:
    """Fill accuracy metrics (always) and FID / corruption / RIS /
    correlation metrics (when enabled) into one report."""
    mcfg = cfg.metrics_cfg
    by_id = {inst.id: inst for inst in dataset}
    ids = sorted(by_id) if eval_ids is None else sorted(eval_ids)
    eval_insts = [by_id[i] for i in ids]
    labels = np.array([inst.label for inst in eval_insts])
    samples = np.stack([inst.sample for inst in eval_insts])
    report = MetricsReport()

    if model is not None:
        logits = model.predict_logits(samples)
        report.global_metrics["top1"] = top1_accuracy(logits, labels)
        acc = per_class_accuracy(logits, labels)
        for c, v in acc.items():
            report.per_class.setdefault(c, {})["top1"] = v
    for c in np.unique(labels):
        report.per_class.setdefault(int(c), {})["count"] = int(
            (labels == c).sum())

    if index is not None:
        full_labels = dataset_labels(dataset)
        corr = nn_corruption(index, full_labels)
        for c, v in corr.items():
            report.per_class.setdefault(c, {})["nn_corruption"] = v

    if mcfg["fid_on"]:
        if adapter is None or extractor is None:
            raise ValidationError("fid_on needs a generator adapter and extractor")
        policy = policy if policy is not None else cfg.make_policy()
        full_labels = dataset_labels(dataset)
        rng = np.random.default_rng(cfg.training.get("seed", 0) + 1000)
        fids = per_class_fid(dataset, full_labels, adapter, extractor,
                             policy.truncation, rng)
        for c, v in fids.items():
            report.per_class.setdefault(c, {})["fid"] = v
        finite = {c: v for c, v in fids.items() if v != MISSING}
        if model is not None and len(set(finite) & set(acc)) >= 3:
            report.correlations["fid_vs_top1"] = correlate(finite, acc)

    if mcfg["ris_on"]:
        if extractor is None:
            raise ValidationError("ris_on needs an extractor")
        policy = policy if policy is not None else cfg.make_policy()
        rng = np.random.default_rng(cfg.training.get("seed", 0) + 2000)
        reps = {}
        for inst in eval_insts[: min(20, len(eval_insts))]:
            rows = [np.asarray(extractor(
                apply_pipeline(policy.pipeline_real, inst.sample, rng)
            )).reshape(-1) for _ in range(4)]
            reps[inst.id] = np.stack(rows)
        report.ris["pipeline_real"] = top25_ris(reps, mcfg["K"], mcfg["q"])
    return report


def run_experiment(config, out_dir=None, seed=None) -> RunReport:
    """Full pipeline; writes report.json, per_class.csv, and plots into the
    run directory and returns the report. Raises StageFailure naming the
    stage on any error."""
    if not isinstance(config, ExperimentConfig):
        config = load_config(config)
    if seed is not None:
        config.raw.setdefault("training", {})["seed"] = seed
    out = Path(out_dir if out_dir is not None else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings = {}

    def timed(stage, fn):
        t0 = time.perf_counter()
        try:
            result = fn()
        except StageFailure:
            raise
        except Exception as exc:
            raise StageFailure(stage, exc) from exc
        timings[stage] = time.perf_counter() - t0
        return result

    dataset = timed("dataset", config.make_dataset)
    extractor = config.make_extractor()
    train_set, hold_set = config.holdout_split(dataset)
    train_ids = [inst.id for inst in train_set]
    hold_ids = [inst.id for inst in hold_set]

    store = timed("embed", lambda: extract_embeddings(dataset, extractor))
    persist_store(store, out / "embeddings.emb")
    pol_raw = config.raw.get("policy", {})
    k = min(pol_raw.get("k", 50), store.count)
    index = timed("index", lambda: build_neighborhoods(store, k))

    adapter = None
    gan_trace = []
    gan_cfg = config.make_gan_config()
    if gan_cfg is not None:
        trainer = timed("gan_train",
                        lambda: train_icgan(dataset, gan_cfg, store=store,
                                            index=index))
        adapter = trainer.adapter()
        gan_trace = trainer.loss_trace
        save_checkpoint(trainer, out / "gan.npz")
    if pol_raw.get("p_g", 0.0) > 0 and adapter is None:
        raise StageFailure("gan_train", ValidationError(
            "p_g > 0 requires a gan section to provide a generator"))

    def build_policy():
        threshold = pol_raw.get("fid_threshold")
        if threshold is None:
            return config.make_policy()
        labels = dataset_labels(dataset)
        rng = np.random.default_rng(config.training.get("seed", 0) + 500)
        fids = per_class_fid(dataset, labels, adapter, extractor,
                             _truncation_of(config), rng)
        finite = {c: v for c, v in fids.items() if v != MISSING}
        return config.make_policy(allowed_classes=fid_filter(finite, threshold))

    policy = timed("policy", build_policy)
    model, report = timed("train",
                          lambda: train_classifier(config, dataset, store, index,
                                                   adapter, policy, train_ids))
    report.gan_loss_trace = gan_trace
    report.metrics = timed("eval",
                           lambda: evaluate(model, dataset, config, store, index,
                                            adapter, extractor, policy, hold_ids))
    report.timings = timings
    np.savez(out / "classifier.npz", weights=model.weights, bias=model.bias)
    timed("report", lambda: write_outputs(report, out))
    return report


def _truncation_of(config: ExperimentConfig):
    from ..gan import TruncationPolicy
    sigma = config.raw.get("policy", {}).get("truncation_sigma", 0.8)
    return TruncationPolicy.disabled() if sigma is None else TruncationPolicy(sigma)


def write_outputs(report: RunReport, out: Path) -> None:
    """report.json, per_class.csv, and the plot files."""
    (out / "report.json").write_text(report.to_json())
    if report.metrics is not None:
        with open(out / "per_class.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["class", "fid", "nn_corruption", "top1"])
            for c in sorted(report.metrics.per_class):
                row = report.metrics.per_class[c]
                writer.writerow([c, row.get("fid", ""),
                                 row.get("nn_corruption", ""),
                                 row.get("top1", "")])
    _write_plots(report, out)


def _write_plots(report: RunReport, out: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if report.epoch_losses or report.gan_loss_trace:
        fig, ax = plt.subplots(figsize=(6, 4))
        if report.epoch_losses:
            ax.plot(report.epoch_losses, label="classifier loss")
        if report.gan_loss_trace:
            trace = np.asarray(report.gan_loss_trace)
            ax.plot(np.linspace(0, max(len(report.epoch_losses), 1), len(trace)),
                    trace[:, 0], alpha=0.6, label="discriminator loss")
            ax.plot(np.linspace(0, max(len(report.epoch_losses), 1), len(trace)),
                    trace[:, 1], alpha=0.6, label="generator loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / "loss_curves.png", dpi=100)
        plt.close(fig)

    if report.metrics is not None:
        pts = [(row["fid"], row["top1"])
               for row in report.metrics.per_class.values()
               if isinstance(row.get("fid"), float) and "top1" in row]
        if pts:
            fig, ax = plt.subplots(figsize=(5, 4))
            fids, accs = zip(*pts)
            ax.scatter(accs, fids)
            ax.set_xlabel("per-class top-1 accuracy")
            ax.set_ylabel("per-class FID")
            fig.tight_layout()
            fig.savefig(out / "fid_vs_accuracy.png", dpi=100)
            plt.close(fig)
