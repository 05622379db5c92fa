"""YAML run and sweep configurations, validated before any compute.

Run config keys (all optional except ``model`` and ``dataset``)::

    model:
      sizes: [2, 64, 64, 2]        # or layers: [{kind, d_in, d_out, slope}, ...]
      activation: relu             # relu | leaky_relu | sigmoid
      slope: 0.01                  # leaky_relu only
      loss: softmax_xent           # softmax_xent | mse
      shard_points: [3]
    dataset: {kind: blobs, centers: 2, spread: 0.5, count: 1000}
    mode: baseline                 # baseline | act | gct | wct
    init: he                       # he | gg(0.5) | {gg: 0.5}
    eta: 0.1
    epochs: 10
    batch: 32
    workers: 1
    quant: {n: 8, k: 0}
    grad_quant: {n: 8, k: 0}       # defaults to quant
    rate: {lambda0: 0.0, alpha: 1.0, epsilon: 1e-8}
    seed: 0
    outdir: run
    baseline: false                # also train a baseline arm for the charts
    wire: {enabled: true, dump: false}

A sweep config has ``base`` (a run config), ``axis`` (lambda0 | nu | alpha)
and ``values`` (at least two).
"""

from __future__ import annotations

import copy
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .. import nn
from ..coding import QuantSpec
from ..ggdist import NU_MAX, NU_MIN
from ..training import MODES, RateLossConfig

__all__ = ["ConfigError", "RunConfig", "SweepSpec", "load_yaml", "parse_run", "parse_sweep", "SWEEP_AXES"]

SWEEP_AXES = ("lambda0", "nu", "alpha")
DATASET_KINDS = ("blobs", "spirals", "seqcopy", "csv")
_RUN_KEYS = {"model", "dataset", "mode", "init", "eta", "epochs", "batch", "workers", "quant", "grad_quant", "rate",
             "seed", "outdir", "baseline", "wire"}


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name
        self.message = message


@dataclass(frozen=True)
class RunConfig:
    layers: tuple
    shard_points: tuple
    dataset: dict
    mode: str = "baseline"
    init_nu: float = 2.0
    init_name: str = "he"
    eta: float = 0.1
    epochs: int = 10
    batch: int = 32
    workers: int = 1
    quant: QuantSpec = field(default_factory=QuantSpec)
    grad_quant: QuantSpec = field(default_factory=QuantSpec)
    rate: RateLossConfig = field(default_factory=RateLossConfig)
    seed: int = 0
    outdir: str = "run"
    baseline: bool = False
    wire: bool = True
    wire_dump: bool = False

    def to_dict(self) -> dict:
        """Fully resolved config; ``parse_run(cfg.to_dict())`` rebuilds it."""
        return {
            "model": {"layers": [_layer_dict(l) for l in self.layers], "shard_points": list(self.shard_points)},
            "dataset": dict(self.dataset),
            "mode": self.mode,
            "init": self.init_name if self.init_name == "he" else {"gg": self.init_nu},
            "eta": self.eta,
            "epochs": self.epochs,
            "batch": self.batch,
            "workers": self.workers,
            "quant": {"n": self.quant.n, "k": self.quant.k},
            "grad_quant": {"n": self.grad_quant.n, "k": self.grad_quant.k},
            "rate": {"lambda0": self.rate.lambda0, "alpha": self.rate.alpha, "epsilon": self.rate.epsilon},
            "seed": self.seed,
            "outdir": self.outdir,
            "baseline": self.baseline,
            "wire": {"enabled": self.wire, "dump": self.wire_dump},
        }

    def rate_config(self) -> RateLossConfig:
        spec = self.grad_quant if self.mode == "gct" else self.quant
        return RateLossConfig(self.rate.lambda0, self.rate.alpha, self.rate.epsilon, spec)


@dataclass(frozen=True)
class SweepSpec:
    base: RunConfig
    axis: str
    values: tuple
    outdir: str = "sweep"

    def child(self, i: int) -> RunConfig:
        """Run config for ``values[i]``; every child keeps the base seed."""
        d = self.base.to_dict()
        v = self.values[i]
        if self.axis == "nu":
            d["init"] = {"gg": v}
        else:
            d["rate"][self.axis] = v
        d["outdir"] = str(Path(self.outdir) / f"{i:02d}_{self.axis}_{v:g}")
        return parse_run(d)


def _layer_dict(l: nn.LayerSpec) -> dict:
    d = {"kind": l.kind}
    if l.d_in is not None:
        d["d_in"] = l.d_in
    if l.d_out is not None:
        d["d_out"] = l.d_out
    if l.slope is not None:
        d["slope"] = l.slope
    return d


def load_yaml(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError("config", f"cannot read {path}: {e.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError("config", f"{path} is not valid YAML: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError("config", f"{path} must hold a mapping at top level")
    return data


def _num(d, key, default, lo=None, hi=None, integer=False, lo_open=False):
    v = d.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(key, f"must be a number, got {v!r}")
    if integer and v != int(v):
        raise ConfigError(key, f"must be an integer, got {v!r}")
    if not math.isfinite(v):
        raise ConfigError(key, "must be finite")
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ConfigError(key, f"must be {'>' if lo_open else '>='} {lo}, got {v}")
    if hi is not None and v > hi:
        raise ConfigError(key, f"must be <= {hi}, got {v}")
    return int(v) if integer else float(v)


def _quant(d, key, default=None):
    q = d.get(key, default)
    if q is None:
        return None
    if not isinstance(q, dict) or set(q) - {"n", "k"}:
        raise ConfigError(key, "must be a mapping with keys n and k")
    try:
        return QuantSpec(_num(q, "n", 8, integer=True), _num(q, "k", 0, integer=True))
    except ValueError as e:
        raise ConfigError(key, str(e)) from None


def _init(v):
    if v is None or v == "he":
        return 2.0, "he"
    if isinstance(v, dict) and set(v) == {"gg"}:
        nu = v["gg"]
    elif isinstance(v, str) and (m := re.fullmatch(r"\s*gg\(\s*([^)]+)\)\s*", v)):
        try:
            nu = float(m.group(1))
        except ValueError:
            raise ConfigError("init", f"bad shape in {v!r}") from None
    else:
        raise ConfigError("init", f"must be 'he', 'gg(nu)' or {{gg: nu}}, got {v!r}")
    if isinstance(nu, bool) or not isinstance(nu, (int, float)) or not NU_MIN <= nu <= NU_MAX:
        raise ConfigError("init", f"shape must lie in [{NU_MIN}, {NU_MAX}], got {nu!r}")
    return float(nu), "gg"


def _model(m):
    if not isinstance(m, dict):
        raise ConfigError("model", "must be a mapping")
    unknown = set(m) - {"sizes", "layers", "activation", "slope", "loss", "shard_points"}
    if unknown:
        raise ConfigError("model", f"unknown keys {sorted(unknown)}")
    try:
        if "layers" in m:
            if "sizes" in m:
                raise ConfigError("model", "give either sizes or layers, not both")
            layers = []
            for i, l in enumerate(m["layers"]):
                if not isinstance(l, dict) or "kind" not in l:
                    raise ConfigError(f"model.layers[{i}]", "must be a mapping with a kind")
                layers.append(nn.LayerSpec(l["kind"], l.get("d_in"), l.get("d_out"), l.get("slope")))
        elif "sizes" in m:
            sizes = m["sizes"]
            if not isinstance(sizes, list) or len(sizes) < 2 or not all(isinstance(s, int) and s >= 1 for s in sizes):
                raise ConfigError("model.sizes", "must list at least two positive integers")
            layers = nn.mlp_layers(sizes, m.get("activation", "relu"), m.get("loss", "softmax_xent"), m.get("slope"))
        else:
            raise ConfigError("model", "needs sizes or layers")
        shard = m.get("shard_points", [])
        if not isinstance(shard, list) or not all(isinstance(s, int) for s in shard):
            raise ConfigError("model.shard_points", "must be a list of layer indices")
        nn.build_model(layers, shard_points=shard)  # checks widths and shard points without keeping weights
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError("model", str(e)) from None
    return tuple(layers), tuple(shard)


def _dataset(d):
    if not isinstance(d, dict) or d.get("kind") not in DATASET_KINDS:
        raise ConfigError("dataset", f"must be a mapping with kind in {DATASET_KINDS}")
    allowed = {"blobs": {"centers", "spread", "count", "dim", "radius"}, "spirals": {"count", "noise", "turns"},
               "seqcopy": {"vocab", "length", "count"}, "csv": {"path", "label_column"}}[d["kind"]]
    unknown = set(d) - allowed - {"kind"}
    if unknown:
        raise ConfigError("dataset", f"unknown keys {sorted(unknown)} for kind {d['kind']}")
    if d["kind"] == "csv" and not {"path", "label_column"} <= set(d):
        raise ConfigError("dataset", "csv needs path and label_column")
    if d["kind"] == "blobs":
        _num(d, "centers", 2, lo=2, integer=True)
        _num(d, "spread", 0.5, lo=0, lo_open=True)
        _num(d, "count", 1000, lo=2, integer=True)
    if d["kind"] == "spirals":
        _num(d, "count", 1000, lo=2, integer=True)
        _num(d, "noise", 0.05, lo=0)
    if d["kind"] == "seqcopy":
        _num(d, "vocab", 8, lo=2, integer=True)
        length = _num(d, "length", 16, lo=4, integer=True)
        if length % 2:
            raise ConfigError("dataset.length", "must be even")
        _num(d, "count", 512, lo=1, integer=True)
    return dict(d)


def parse_run(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config", "must be a mapping")
    unknown = set(d) - _RUN_KEYS
    if unknown:
        raise ConfigError("config", f"unknown keys {sorted(unknown)}")
    for key in ("model", "dataset"):
        if key not in d:
            raise ConfigError(key, "is required")
    layers, shard = _model(d["model"])
    dataset = _dataset(d["dataset"])
    mode = d.get("mode", "baseline")
    if mode not in MODES:
        raise ConfigError("mode", f"must be one of {MODES}, got {mode!r}")
    if mode == "act" and not shard:
        raise ConfigError("mode", "act needs model.shard_points")
    nu, init_name = _init(d.get("init"))
    eta = _num(d, "eta", 0.1, lo=0, lo_open=mode == "gct")
    epochs = _num(d, "epochs", 10, lo=1, integer=True)
    batch = _num(d, "batch", 32, lo=1, integer=True)
    workers = _num(d, "workers", 1, lo=1, integer=True)
    if workers > batch:
        raise ConfigError("workers", f"{workers} workers exceed batch size {batch}")
    quant = _quant(d, "quant", {"n": 8, "k": 0})
    grad_quant = _quant(d, "grad_quant") or quant
    r = d.get("rate", {}) or {}
    if not isinstance(r, dict) or set(r) - {"lambda0", "alpha", "epsilon"}:
        raise ConfigError("rate", "must be a mapping with keys lambda0, alpha, epsilon")
    lam = _num(r, "lambda0", 0.0, lo=0)
    alpha = _num(r, "alpha", 1.0, lo=0, hi=1, lo_open=True)
    eps = _num(r, "epsilon", 1e-8, lo=0, hi=1e-2, lo_open=True)
    if lam > 0 and mode in ("act", "wct") and quant.n == 0:
        raise ConfigError("quant.n", "rate gradients need n >= 1")
    if lam > 0 and mode == "gct" and grad_quant.n == 0:
        raise ConfigError("grad_quant.n", "rate gradients need n >= 1")
    seed = _num(d, "seed", 0, lo=0, integer=True)
    outdir = d.get("outdir", "run")
    if not isinstance(outdir, str) or not outdir:
        raise ConfigError("outdir", "must be a nonempty string")
    baseline = d.get("baseline", False)
    if not isinstance(baseline, bool):
        raise ConfigError("baseline", "must be true or false")
    w = d.get("wire", {}) or {}
    if isinstance(w, bool):
        w = {"enabled": w}
    if not isinstance(w, dict) or set(w) - {"enabled", "dump"}:
        raise ConfigError("wire", "must be a mapping with keys enabled, dump")
    return RunConfig(layers, shard, dataset, mode, nu, init_name, eta, epochs, batch, workers, quant, grad_quant,
                     RateLossConfig(lam, alpha, eps), seed, outdir, baseline, bool(w.get("enabled", True)),
                     bool(w.get("dump", False)))


def parse_sweep(d: dict) -> SweepSpec:
    if not isinstance(d, dict) or set(d) - {"base", "axis", "values", "outdir"}:
        raise ConfigError("sweep", "must be a mapping with keys base, axis, values, outdir")
    if "base" not in d:
        raise ConfigError("base", "is required")
    base = parse_run(copy.deepcopy(d["base"]))
    axis = d.get("axis")
    if axis not in SWEEP_AXES:
        raise ConfigError("axis", f"must be one of {SWEEP_AXES}, got {axis!r}")
    values = d.get("values")
    if not isinstance(values, list) or len(values) < 2:
        raise ConfigError("values", "a sweep needs at least two values")
    if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in values):
        raise ConfigError("values", "must be numbers")
    spec = SweepSpec(base, axis, tuple(float(v) for v in values), d.get("outdir", base.outdir))
    for i in range(len(values)):
        spec.child(i)  # validates every child before running any
    return spec
