"""Tensor statistics, GG-vs-Gaussian fit reports and run report emission."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import coding, ggdist
from .coding import QuantSpec
from .ggdist import FitReport, GGParams

__all__ = [
    "TensorStats",
    "tensor_stats",
    "gaussian_fit",
    "fit_pair",
    "fig1_report",
    "emit_run_report",
    "svg_line_chart",
    "RUN_CSV_FIELDS",
    "rate_key_for_mode",
]

RUN_CSV_FIELDS = ("epoch", "mean_loss", "accuracy", "act_rate_bits", "grad_rate_bits", "weight_rate_bits",
                  "lambda_tau")


@dataclass(frozen=True)
class TensorStats:
    avg_eg_bits: float
    avg_hm_bits: float
    fl_bits: float
    c_eg: float
    c_hm: float
    discrete_entropy_bits: float
    element_count: int
    fit: FitReport | None  # None when the tensor cannot be fitted (constant, too small)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in ("avg_eg_bits", "avg_hm_bits", "fl_bits", "c_eg", "c_hm",
                                             "discrete_entropy_bits", "element_count")}
        out["fit"] = None if self.fit is None else {**self.fit.params.to_dict(), "goodness": self.fit.goodness,
                                                   "sample_count": self.fit.sample_count}
        return out


def tensor_stats(x, spec: QuantSpec) -> TensorStats:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("tensor_stats of an empty tensor")
    q = coding.quantize(x, spec).values
    mapped = coding.zigzag_map(q)
    eg = float(np.mean(coding.eg_code_length(mapped, spec.k)))
    hm = coding.huffman_avg_length(mapped)
    fl = coding.fl_bits(q)
    try:
        fit = ggdist.fit_shape(x)
    except ValueError:
        fit = None
    return TensorStats(eg, hm, fl, 1.0 - eg / fl, 1.0 - hm / fl, coding.empirical_entropy(q), int(x.size), fit)


def gaussian_fit(data) -> FitReport:
    """The nu = 2 restriction: mean and standard deviation taken from the data."""
    x = np.asarray(data, dtype=np.float64).ravel()
    mu, sigma = float(x.mean()), float(x.std())
    if not sigma > 0:
        raise ggdist.GGFitError("zero variance")
    p = GGParams(mu, ggdist.beta_from_sigma(sigma, 2.0), 2.0)
    return FitReport(p, ggdist.fit_goodness(x, p, mu, sigma), int(x.size))


def fit_pair(data) -> dict:
    gg, ga = ggdist.fit_shape(data), gaussian_fit(data)
    return {"gg": gg, "gaussian": ga, "gg_beats_gaussian": gg.goodness <= ga.goodness}


def _collect(model, dataset, rng, batch_size):
    from .nn import backward, compute_loss, forward

    weights = np.concatenate([w.ravel() for w in model.weights])
    rec = forward(model, dataset.X)
    if rec.boundary_activations:
        acts = np.concatenate([a.ravel() for a in rec.boundary_activations])
    else:
        acts = rec.output.ravel()
    idx = rng.choice(len(dataset), size=min(batch_size, len(dataset)), replace=False)
    brec = forward(model, dataset.X[idx])
    _, dout = compute_loss(model.loss, brec.output, dataset.y[idx])
    grads = np.concatenate([g.ravel() for g in backward(model, brec, dout)])
    return {"weights": weights, "activations": acts, "gradients": grads}


def fig1_report(model, dataset, rng: np.random.Generator, outdir=None, batch_size: int = 256,
                strict: bool = False) -> dict:
    """GG and Gaussian fits of all weights, one pass of activations and one batch of gradients.

    Activations are the shard-boundary outputs, or the model output when the
    model has no shard points. A quantity that cannot be fitted (too few
    samples, zero variance) maps to ``{"skipped": reason}``. Writes ``fig1.json``
    and ``fig1_hist.csv`` when ``outdir`` is given. With ``strict`` a quantity
    where the Gaussian fits better raises ``AssertionError``; otherwise it is
    flagged in the result.
    """
    tensors = _collect(model, dataset, rng, batch_size)
    report = {}
    for name, x in tensors.items():
        try:
            report[name] = fit_pair(x)
        except ValueError as e:
            report[name] = {"skipped": str(e)}
    if outdir is not None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        summary = {}
        for name, r in report.items():
            if "skipped" in r:
                summary[name] = r
                continue
            summary[name] = {
                "gg": {**r["gg"].params.to_dict(), "goodness": r["gg"].goodness},
                "gaussian": {**r["gaussian"].params.to_dict(), "goodness": r["gaussian"].goodness},
                "gg_beats_gaussian": bool(r["gg_beats_gaussian"]),
                "sample_count": r["gg"].sample_count,
            }
        (outdir / "fig1.json").write_text(json.dumps(summary, indent=2))
        with open(outdir / "fig1_hist.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["quantity", "bin_left", "bin_right", "empirical_mass", "gg_mass", "gaussian_mass"])
            for name, x in tensors.items():
                if "skipped" in report[name]:
                    continue
                mu, sigma = float(x.mean()), float(x.std())
                h = ggdist.HIST_HALF_WIDTH * sigma
                edges = np.linspace(mu - h, mu + h, ggdist.HIST_BINS + 1)
                counts, _ = np.histogram(x, bins=edges)
                gg = np.diff(ggdist.cdf(edges, report[name]["gg"].params))
                ga = np.diff(ggdist.cdf(edges, report[name]["gaussian"].params))
                for i in range(ggdist.HIST_BINS):
                    w.writerow([name, repr(float(edges[i])), repr(float(edges[i + 1])), repr(float(counts[i] / x.size)),
                                repr(float(gg[i])), repr(float(ga[i]))])
    if strict:
        bad = [n for n, r in report.items() if not r.get("gg_beats_gaussian", True)]
        if bad:
            raise AssertionError(f"Gaussian fits better than GG for {bad}")
    return report


def rate_key_for_mode(mode: str) -> str:
    return {"act": "act_rate_bits", "gct": "grad_rate_bits", "wct": "weight_rate_bits"}.get(mode, "grad_rate_bits")


def svg_line_chart(series: dict, title: str, ylabel: str, width: int = 640, height: int = 400) -> str:
    """Static SVG 1.1 chart with one polyline per ``{name: (xs, ys)}`` series."""
    pad_l, pad_r, pad_t, pad_b = 64, 16, 32, 48
    pts = [(x, y) for xs, ys in series.values() for x, y in zip(xs, ys) if math.isfinite(y)]
    if not pts:
        raise ValueError("nothing to plot")
    x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
    y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b

    def sx(x):
        return pad_l + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return pad_t + (1 - (y - y0) / (y1 - y0)) * ph

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad_l}" y1="{pad_t + ph}" x2="{pad_l + pw}" y2="{pad_t + ph}" stroke="black"/>',
        f'<line x1="{pad_l}" y1="{pad_t}" x2="{pad_l}" y2="{pad_t + ph}" stroke="black"/>',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle" font-size="12">epoch</text>',
        f'<text x="16" y="{pad_t + ph / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {pad_t + ph / 2})">{ylabel}</text>',
        f'<text x="{pad_l - 4}" y="{pad_t + ph}" text-anchor="end" font-size="10">{y0:.4g}</text>',
        f'<text x="{pad_l - 4}" y="{pad_t + 10}" text-anchor="end" font-size="10">{y1:.4g}</text>',
        f'<text x="{pad_l}" y="{pad_t + ph + 14}" text-anchor="middle" font-size="10">{x0:g}</text>',
        f'<text x="{pad_l + pw}" y="{pad_t + ph + 14}" text-anchor="middle" font-size="10">{x1:g}</text>',
    ]
    for i, (name, (xs, ys)) in enumerate(series.items()):
        c = colors[i % len(colors)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys) if math.isfinite(y))
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{coords}"/>')
        out.append(f'<text x="{pad_l + pw - 4}" y="{pad_t + 14 + 14 * i}" text-anchor="end" font-size="11" '
                   f'fill="{c}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _write_run_csv(path, logs):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RUN_CSV_FIELDS)
        for log in logs:
            d = log.to_dict()
            w.writerow([d["epoch"]] + [repr(float(d[k])) for k in RUN_CSV_FIELDS[1:]])


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return _jsonable(v.item())
    return v


def emit_run_report(logs: Sequence, stats: dict | None, outdir, baseline_logs: Sequence | None = None,
                    config: dict | None = None, seed: int | None = None, mode: str = "baseline",
                    extra: dict | None = None) -> dict:
    """Write ``run.csv``, ``summary.json``, ``loss.svg`` and ``rate.svg`` into ``outdir``.

    ``stats`` maps a tensor name to its ``TensorStats``. Returns the summary.
    """
    if not logs:
        raise ValueError("no epoch logs to report")
    outdir = Path(outdir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {outdir}: {e}") from e
    _write_run_csv(outdir / "run.csv", logs)

    rate_key = rate_key_for_mode(mode)
    summary = {
        "mode": mode,
        "seed": seed,
        "epochs": len(logs),
        "final": logs[-1].to_dict(),
        "baseline_final": baseline_logs[-1].to_dict() if baseline_logs else None,
        "rate_metric": rate_key,
        "tensor_stats": {k: s.to_dict() for k, s in (stats or {}).items()},
        "config": config,
    }
    if extra:
        summary.update(extra)
    summary = _jsonable(summary)
    (outdir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))

    def series(key):
        s = {mode: ([l.epoch for l in logs], [float(getattr(l, key)) for l in logs])}
        if baseline_logs:
            s["baseline"] = ([l.epoch for l in baseline_logs], [float(getattr(l, key)) for l in baseline_logs])
        return s

    (outdir / "loss.svg").write_text(svg_line_chart(series("mean_loss"), "training loss", "mean loss"))
    rs = series(rate_key)
    if all(not math.isfinite(y) for _, ys in rs.values() for y in ys):
        rs = series("grad_rate_bits")
    (outdir / "rate.svg").write_text(svg_line_chart(rs, rate_key.replace("_", " "), "bits / element"))
    return summary
