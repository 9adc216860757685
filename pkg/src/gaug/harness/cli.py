"""Command-line entry point for the toolkit."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .. import __version__
from ..embeddings import (FORMAT_VERSION, extract_embeddings, load_store,
                          persist_store)
from ..errors import GaugError
from ..gan import CHECKPOINT_VERSION, load_checkpoint, save_checkpoint, train_icgan
from ..knn import build_neighborhoods
from .classifier import LinearClassifier
from .config import load_config
from .train import RunReport, StageFailure, evaluate, run_experiment, write_outputs


def _print_version(ctx, param, value):
    if not value or ctx.resilient_parsing:
        return
    click.echo(f"gaug {__version__} "
               f"(embedding format v{FORMAT_VERSION}, "
               f"checkpoint format v{CHECKPOINT_VERSION})")
    ctx.exit()


@click.group()
@click.option("--version", is_flag=True, callback=_print_version,
              expose_value=False, is_eager=True,
              help="Print toolkit and file-format versions.")
@click.option("--seed", type=int, default=None,
              help="Override the training seed from the config.")
@click.option("--workers", type=int, default=1,
              help="Data-loading worker count (stages run sequentially).")
@click.option("--out-dir", type=click.Path(), default=None,
              help="Override the config's output directory.")
@click.pass_context
def main(ctx, seed, workers, out_dir):
    """Generator-conditioned augmentation toolkit."""
    ctx.ensure_object(dict)
    ctx.obj.update(seed=seed, workers=workers, out_dir=out_dir)


def _fail(exc: Exception) -> None:
    stage = getattr(exc, "stage", None)
    prefix = f"[{stage}] " if stage else ""
    click.echo(f"error: {prefix}{exc}", err=True)
    sys.exit(2 if stage else 1)


@main.command()
@click.argument("config_path", type=click.Path(exists=True))
@click.argument("out_path", type=click.Path())
@click.pass_context
def embed(ctx, config_path, out_path):
    """Extract embeddings for the configured dataset into OUT_PATH."""
    try:
        cfg = load_config(config_path)
        store = extract_embeddings(cfg.make_dataset(), cfg.make_extractor())
        persist_store(store, out_path)
    except GaugError as exc:
        _fail(exc)
    click.echo(f"wrote {store.count} x {store.dim} embeddings to {out_path}")


@main.command()
@click.argument("emb_path", type=click.Path(exists=True))
@click.argument("out_path", type=click.Path())
@click.option("--k", type=int, default=50, show_default=True,
              help="Neighborhood size.")
def index(emb_path, out_path, k):
    """Build the cosine k-NN index for a persisted embedding store."""
    try:
        store = load_store(emb_path)
        idx = build_neighborhoods(store, min(k, store.count))
    except GaugError as exc:
        _fail(exc)
    np.savez(out_path, neighbors=idx.neighbors, k=np.int64(idx.k))
    click.echo(f"wrote {idx.count} x {idx.k} index to {out_path}")


@main.command("gan-train")
@click.argument("config_path", type=click.Path(exists=True))
@click.pass_context
def gan_train(ctx, config_path):
    """Train the toy conditional generator and save its checkpoint."""
    try:
        cfg = load_config(config_path)
        gan_cfg = cfg.make_gan_config()
        if gan_cfg is None:
            raise GaugError("config has no gan section")
        trainer = train_icgan(cfg.make_dataset(), gan_cfg,
                              extractor=cfg.make_extractor())
        out = Path(ctx.obj["out_dir"] or cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(trainer, out / "gan.npz")
    except GaugError as exc:
        _fail(exc)
    d, g = trainer.loss_trace[-1] if trainer.loss_trace else (float("nan"),) * 2
    click.echo(f"trained {trainer.steps_done} steps "
               f"(final loss_d={d:.4f} loss_g={g:.4f}); "
               f"checkpoint at {out / 'gan.npz'}")


@main.command()
@click.argument("config_path", type=click.Path(exists=True))
@click.pass_context
def train(ctx, config_path):
    """Run the full experiment: embed, index, optional generator training,
    augmented classifier training, evaluation, and report files."""
    try:
        report = run_experiment(config_path, out_dir=ctx.obj["out_dir"],
                                seed=ctx.obj["seed"])
    except (GaugError, StageFailure) as exc:
        _fail(exc)
    top1 = (report.metrics.global_metrics.get("top1")
            if report.metrics else None)
    click.echo(f"run complete; top1={top1}")


@main.command("eval")
@click.argument("config_path", type=click.Path(exists=True))
@click.option("--checkpoint", "checkpoint_path", type=click.Path(exists=True),
              required=True, help="classifier.npz from a previous run.")
@click.pass_context
def eval_cmd(ctx, config_path, checkpoint_path):
    """Evaluate a saved classifier checkpoint on the configured dataset."""
    try:
        cfg = load_config(config_path)
        with np.load(checkpoint_path) as ck:
            model = LinearClassifier(ck["weights"], ck["bias"])
        dataset = cfg.make_dataset()
        extractor = cfg.make_extractor()
        store = extract_embeddings(dataset, extractor)
        k = min(cfg.raw.get("policy", {}).get("k", 50), store.count)
        idx = build_neighborhoods(store, k)
        adapter = None
        ck_path = Path(checkpoint_path).parent / "gan.npz"
        if ck_path.exists():
            adapter = load_checkpoint(ck_path,
                                      expect_conditioning_dim=store.dim)
        metrics = evaluate(model, dataset, cfg, store=store, index=idx,
                           adapter=adapter, extractor=extractor)
    except GaugError as exc:
        _fail(exc)
    click.echo(metrics.to_json())


@main.command()
@click.argument("config_path", type=click.Path(exists=True))
@click.pass_context
def metrics(ctx, config_path):
    """Compute dataset-level metrics (neighborhood corruption, and per-class
    FID when a generator checkpoint is available) without training a
    classifier."""
    try:
        cfg = load_config(config_path)
        dataset = cfg.make_dataset()
        extractor = cfg.make_extractor()
        store = extract_embeddings(dataset, extractor)
        k = min(cfg.raw.get("policy", {}).get("k", 50), store.count)
        idx = build_neighborhoods(store, k)
        adapter = None
        ck_path = Path(ctx.obj["out_dir"] or cfg.output_dir) / "gan.npz"
        if ck_path.exists():
            adapter = load_checkpoint(ck_path,
                                      expect_conditioning_dim=store.dim)
        report = evaluate(None, dataset, cfg, store=store, index=idx,
                          adapter=adapter, extractor=extractor)
    except GaugError as exc:
        _fail(exc)
    click.echo(report.to_json())


@main.command()
@click.argument("run_dir", type=click.Path(exists=True))
def report(run_dir):
    """Re-render per_class.csv and plots from a run directory's report.json."""
    run_dir = Path(run_dir)
    try:
        doc = json.loads((run_dir / "report.json").read_text())
        from ..metrics import MetricsReport
        rep = RunReport(
            config_snapshot=doc.get("config", {}),
            epoch_losses=doc.get("epoch_losses", []),
            epoch_accuracies=doc.get("epoch_accuracies", []),
            gan_loss_trace=[tuple(t) for t in doc.get("gan_loss_trace", [])],
            metrics=MetricsReport.from_dict(doc["metrics"])
            if doc.get("metrics") else None,
            seeds=doc.get("seeds", {}),
            timings=doc.get("timings", {}),
        )
        write_outputs(rep, run_dir)
    except (GaugError, OSError, json.JSONDecodeError) as exc:
        _fail(exc)
    click.echo(f"re-rendered outputs in {run_dir}")


if __name__ == "__main__":
    main()
