"""Execute run and sweep configs and lay out their artifacts."""

from __future__ import annotations

import csv
import json
import logging
import os
from pathlib import Path

import numpy as np

from .. import gginit, metrics, nn
from ..comm import WireLink, effective_ratio
from ..training import TrainingDiverged, TrainOptions, train
from .config import RunConfig, SweepSpec
from .datasets import gen_dataset

__all__ = ["OUTPUT_ROOT_ENV", "output_root", "resolve_outdir", "seed_streams", "build", "run", "sweep",
           "TRADEOFF_FIELDS", "OutdirExists"]

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "GGOPT_OUTPUT_ROOT"
TRADEOFF_FIELDS = ("index", "axis", "value", "status", "final_accuracy", "final_loss", "rate_metric",
                   "final_rate_bits", "c_eg", "c_hm", "initial_entropy_bits", "error")


class OutdirExists(FileExistsError):
    pass


def output_root(default: str | os.PathLike = "runs") -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV) or default)


def resolve_outdir(outdir: str, root: Path | None = None) -> Path:
    p = Path(outdir)
    return p if p.is_absolute() else (root if root is not None else output_root()) / p


def seed_streams(seed: int):
    """Independent generators for data, initialization and training order."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]


def _dataset(cfg: RunConfig, rng):
    params = {k: v for k, v in cfg.dataset.items() if k != "kind"}
    return gen_dataset(cfg.dataset["kind"], params, rng)


def build(cfg: RunConfig):
    """``(model, dataset, train_rng)`` for a config; 'he' goes through the same GG path with nu = 2."""
    data_rng, init_rng, train_rng = seed_streams(cfg.seed)
    data = _dataset(cfg, data_rng)
    model = nn.build_model(list(cfg.layers), shard_points=list(cfg.shard_points))
    model = gginit.init_model(model, gginit.InitSpec(nu=cfg.init_nu, seed=cfg.seed), init_rng)
    return model, data, train_rng


def _options(cfg: RunConfig, link=None):
    return TrainOptions(batch_size=cfg.batch, act_spec=cfg.quant, grad_spec=cfg.grad_quant, weight_spec=cfg.quant,
                        link=link, workers=cfg.workers)


def _final_stats(model, data, cfg: RunConfig, rng):
    boundary = None
    if model.shard_points:
        from ..comm import QuantLink

        boundary = QuantLink(cfg.quant).activation
    stats = {"weights": metrics.tensor_stats(np.concatenate([w.ravel() for w in model.weights]), cfg.quant)}
    rec = nn.forward(model, data.X, boundary=boundary)
    if rec.boundary_activations:
        acts = np.concatenate([a.ravel() for a in rec.boundary_activations])
        stats["activations"] = metrics.tensor_stats(acts, cfg.quant)
    idx = rng.choice(len(data), size=min(cfg.batch, len(data)), replace=False)
    brec = nn.forward(model, data.X[idx], boundary=boundary)
    _, dout = nn.compute_loss(model.loss, brec.output, data.y[idx])
    grads = np.concatenate([g.ravel() for g in nn.backward(model, brec, dout)])
    stats["gradients"] = metrics.tensor_stats(grads, cfg.grad_quant)
    return stats


def _relevant(mode: str, stats: dict):
    if mode == "act":
        return stats.get("activations", stats["weights"])
    if mode == "gct":
        return stats["gradients"]
    return stats["weights"]


def _prepare_outdir(path: Path, overwrite: bool):
    if path.exists() and any(path.iterdir()) and not overwrite:
        raise OutdirExists(f"output directory {path} is not empty (pass --overwrite to reuse it)")
    path.mkdir(parents=True, exist_ok=True)


def run(cfg: RunConfig, root: Path | None = None, overwrite: bool = False) -> dict:
    """Train one configuration and write its artifacts; returns the summary.

    A diverged run still writes ``run.csv`` for the completed epochs and a
    summary with ``status: diverged`` before re-raising.
    """
    outdir = resolve_outdir(cfg.outdir, root)
    _prepare_outdir(outdir, overwrite)
    model, data, train_rng = build(cfg)
    initial = metrics.tensor_stats(np.concatenate([w.ravel() for w in model.weights]), cfg.quant)

    link = None
    if cfg.wire and (cfg.shard_points or cfg.workers > 1):
        link = WireLink(cfg.quant, cfg.grad_quant, dump_dir=outdir / "blobs" if cfg.wire_dump else None)
    extra = {"status": "ok", "initial_weight_stats": initial.to_dict(), "dataset_size": len(data),
             "topology": "star" if cfg.workers > 1 else "pipeline"}
    try:
        trained, logs = train(model, data, cfg.eta, cfg.epochs, train_rng, cfg.mode, cfg.rate_config(),
                              _options(cfg, link))
    except TrainingDiverged as e:
        extra.update(status="diverged", error=str(e), partial_losses=e.partial_losses)
        if e.logs:
            metrics.emit_run_report(e.logs, None, outdir, config=cfg.to_dict(), seed=cfg.seed, mode=cfg.mode,
                                    extra=extra)
        else:
            (outdir / "summary.json").write_text(json.dumps(
                {"mode": cfg.mode, "seed": cfg.seed, "config": cfg.to_dict(), **extra}, indent=2, sort_keys=True))
        raise

    baseline_logs = None
    if cfg.baseline and cfg.mode != "baseline":
        bmodel, bdata, brng = build(cfg)
        _, baseline_logs = train(bmodel, bdata, cfg.eta, cfg.epochs, brng, "baseline", None, _options(cfg))

    stats = _final_stats(trained, data, cfg, np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(4)[3]))
    if link is not None:
        link.ledger.write_csv(outdir / "ledger.csv")
        wire = {}
        for direction in ("activation", "gradient"):
            t = link.ledger.totals(direction=direction)
            if t["transfers"]:
                wire[direction] = {**t, **effective_ratio(link.ledger, direction=direction)}
        extra["wire"] = wire
    rel = _relevant(cfg.mode, stats)
    extra["c_eg"], extra["c_hm"] = rel.c_eg, rel.c_hm
    nn.save_model(outdir / "model.ckpt", trained, seed=cfg.seed, extra={"config": cfg.to_dict()})
    return metrics.emit_run_report(logs, stats, outdir, baseline_logs, cfg.to_dict(), cfg.seed, cfg.mode, extra)


def sweep(spec: SweepSpec, root: Path | None = None, overwrite: bool = False) -> list:
    """Run every child in order; failures are recorded per row and the sweep continues."""
    outdir = resolve_outdir(spec.outdir, root)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, value in enumerate(spec.values):
        child = spec.child(i)
        row = dict.fromkeys(TRADEOFF_FIELDS, "")
        row.update(index=i, axis=spec.axis, value=value, rate_metric=metrics.rate_key_for_mode(child.mode))
        try:
            s = run(child, root, overwrite)
            final = s["final"]
            row.update(status="ok", final_accuracy=final["accuracy"], final_loss=final["mean_loss"],
                       final_rate_bits=final[s["rate_metric"]], c_eg=s["c_eg"], c_hm=s["c_hm"],
                       initial_entropy_bits=s["initial_weight_stats"]["discrete_entropy_bits"])
        except (TrainingDiverged, OutdirExists, ValueError, OSError) as e:
            log.warning("sweep child %d (%s=%g) failed: %s", i, spec.axis, value, e)
            row.update(status="failed", error=f"{type(e).__name__}: {e}")
        rows.append(row)
    with open(outdir / "tradeoff.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRADEOFF_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else v) for k, v in r.items()})
    return rows
