"""Rate-constrained training: baseline SGD, ACT, GCT and the WCT comparison arm.

All four modes share one step engine so that with ``lambda0 == 0`` every mode
follows the baseline trajectory bit for bit. Boundary activations are
quantized on the forward pass in every mode whenever the model has shard
points (the wire always carries quantized tensors); gradients pass straight
through the quantizer.

Modes
-----
baseline  ``w <- w - eta * g``
act       loss ``D + lambda * sum_i R(A_i)``; the rate gradient is injected at
          each shard activation. No decay of lambda.
gct       ``w <- w - eta * g_hat`` with the equivalent gradient
          ``g_hat = g + lambda_tau * dR/dg * h_hat``; lambda decays by ``alpha``
          after every epoch.
wct       ``w <- w - eta * (g + lambda * dR/dw)``; no decay.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import coding
from .coding import QuantSpec
from .comm import QuantLink, data_parallel_round
from .nn import Model, backward, compute_loss, forward

__all__ = [
    "MODES",
    "Dataset",
    "RateLossConfig",
    "TrainOptions",
    "TrainState",
    "EpochLog",
    "StepInfo",
    "TrainingDiverged",
    "act_rate_and_injections",
    "gct_equivalent_grad",
    "train",
    "train_baseline",
    "train_act",
    "train_gct",
    "train_wct",
    "evaluate",
]

log = logging.getLogger(__name__)

MODES = ("baseline", "act", "gct", "wct")
DIVERGENCE_FACTOR = 1e3


class TrainingDiverged(RuntimeError):
    """Raised when training blows up.

    ``logs`` holds the completed epochs and ``partial_losses`` the step losses
    of the aborted epoch, including the one that triggered the abort when it
    was finite. Both are filled in by ``train``.
    """

    def __init__(self, msg, logs=None, partial_losses=None):
        super().__init__(msg)
        self.logs = logs or []
        self.partial_losses = partial_losses or []


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    kind: str = "custom"
    n_classes: int | None = None

    def __post_init__(self):
        if len(self.X) != len(self.y):
            raise ValueError(f"X has {len(self.X)} rows but y has {len(self.y)}")
        if len(self.X) == 0:
            raise ValueError("empty dataset")

    def __len__(self):
        return len(self.X)


@dataclass(frozen=True)
class RateLossConfig:
    lambda0: float = 0.0
    alpha: float = 1.0
    epsilon: float = 1e-8
    spec: QuantSpec = field(default_factory=QuantSpec)

    def __post_init__(self):
        if not self.lambda0 >= 0:
            raise ValueError(f"lambda0 must be >= 0, got {self.lambda0}")
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0 < self.epsilon <= 1e-2:
            raise ValueError(f"epsilon must lie in (0, 1e-2], got {self.epsilon}")

    def lambda_at(self, tau: int) -> float:
        return self.lambda0 * self.alpha**tau


@dataclass
class TrainState:
    eta: float
    lambda_tau: float = 0.0
    step: int = 1  # t, 1-based; incremented after each weight update
    epoch: int = 0
    prev_equiv_grads: list | None = None
    last_h: list | None = None


@dataclass
class EpochLog:
    epoch: int
    mean_loss: float
    accuracy: float
    act_rate_bits: float
    grad_rate_bits: float
    weight_rate_bits: float
    lambda_tau: float
    mean_objective: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StepInfo:
    epoch: int
    step: int
    loss: float
    act_rate: float  # sum over shard activations
    objective: float
    boundary_activations: list
    grads: list
    update: list  # the gradient actually applied (g, g_hat or g + lambda dR/dw)
    h_hat: list | None
    lambda_tau: float
    weights_before: list
    weights_after: list


@dataclass
class TrainOptions:
    """Run-level knobs shared by every mode.

    ``act_spec`` quantizes boundary activations and measures their rate;
    ``grad_spec`` and ``weight_spec`` measure gradient and weight rates.
    ``link`` replaces the in-process boundary/gradient quantizer (e.g. a
    ``comm.WireLink``). ``workers > 1`` splits each batch into that many
    shards and averages quantized worker gradients.
    """

    batch_size: int = 32
    act_spec: QuantSpec = field(default_factory=QuantSpec)
    grad_spec: QuantSpec | None = None
    weight_spec: QuantSpec | None = None
    quantize_boundaries: bool = True
    link: QuantLink | None = None
    workers: int = 1
    callback: Callable | None = None
    divergence_factor: float = DIVERGENCE_FACTOR

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.workers > self.batch_size:
            raise ValueError(f"{self.workers} workers exceed batch size {self.batch_size}")
        self.grad_spec = self.grad_spec or self.act_spec
        self.weight_spec = self.weight_spec or self.act_spec


def act_rate_and_injections(activations: Sequence[np.ndarray], cfg: RateLossConfig, lam: float | None = None):
    """Summed EG rate of the shard activations and the gradient each one receives.

    ``injections[i] = lam * rate_grad(A_i) / A_i.size`` (``lam`` defaults to
    ``cfg.lambda0``).
    """
    if not activations:
        raise ValueError("no shard activations")
    lam = cfg.lambda0 if lam is None else lam
    total = 0.0
    inj = []
    for a in activations:
        total += coding.rate(a, cfg.spec)
        inj.append(lam * coding.rate_grad(a, cfg.spec, cfg.epsilon) / a.size)
    return total, inj


def gct_equivalent_grad(g_t: Sequence[np.ndarray], state: TrainState, cfg: RateLossConfig) -> list:
    """Equivalent gradient ``g + lambda_tau * dR/dg * h_hat``; stores it in ``state``.

    ``h_hat = (1 - g / (g_hat_prev + eps)) / eta`` from step 2 on, 0 at step 1.
    Does not advance ``state.step``.
    """
    prev = state.prev_equiv_grads
    if prev is None:
        prev = [np.zeros_like(g) for g in g_t]
    inv_eta = 1.0 / state.eta
    out, hs = [], []
    for g, gp in zip(g_t, prev):
        if state.step >= 2:
            with np.errstate(divide="ignore", invalid="ignore"):
                h = -inv_eta * g / (gp + cfg.epsilon) + inv_eta
        else:
            h = np.zeros_like(g)
        if not np.all(np.isfinite(h)):
            raise TrainingDiverged(f"non-finite curvature estimate at step {state.step}")
        hs.append(h)
        out.append(g + state.lambda_tau * coding.rate_grad(g, cfg.spec, cfg.epsilon) * h)
    state.prev_equiv_grads = out
    state.last_h = hs
    return out


def _concat(ts):
    return np.concatenate([t.ravel() for t in ts])


def _accuracy(kind, output, y):
    if kind != "softmax_xent":
        return float("nan")
    valid = y != -1
    return float(np.mean(np.argmax(output, axis=-1)[valid] == y[valid]))


def evaluate(model: Model, data: Dataset, act_spec: QuantSpec | None = None, quantize_boundaries: bool = True):
    """Full-dataset ``(loss, accuracy)`` with boundaries quantized as in training."""
    boundary = None
    if quantize_boundaries and model.shard_points and act_spec is not None:
        link = QuantLink(act_spec)
        boundary = link.activation
    rec = forward(model, data.X, boundary=boundary)
    loss, _ = compute_loss(model.loss, rec.output, data.y)
    return loss, _accuracy(model.loss, rec.output, data.y)


def train(model: Model, data: Dataset, eta: float, epochs: int, rng: np.random.Generator,
          mode: str = "baseline", cfg: RateLossConfig | None = None, options: TrainOptions | None = None):
    """Mini-batch training loop for every mode. Returns ``(model, [EpochLog])``."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if model.loss is None:
        raise ValueError("model has no loss layer")
    if not eta >= 0:
        raise ValueError(f"eta must be >= 0, got {eta}")
    if mode == "gct" and not eta > 0:
        raise ValueError("gct needs eta > 0 (curvature estimate divides by eta)")
    options = options or TrainOptions()
    cfg = cfg or RateLossConfig(spec=_default_rate_spec(mode, options))
    if mode == "act" and not model.shard_points:
        raise ValueError("act needs at least one shard point")
    if mode == "act" and cfg.alpha != 1.0:
        log.info("act applies no lambda decay; alpha=%s is ignored", cfg.alpha)

    model = model.copy()
    link = options.link
    if link is None:
        link = QuantLink(options.act_spec, options.grad_spec)
    use_boundary = options.quantize_boundaries and bool(model.shard_points)
    state = TrainState(eta=eta, lambda_tau=cfg.lambda_at(0) if mode != "baseline" else 0.0)
    n = len(data)
    bs = options.batch_size
    logs = []
    initial_loss = None

    def shard_grads(m: Model, xb, yb, lam):
        boundary = link.activation if use_boundary else None
        rec = forward(m, xb, boundary=boundary)
        loss, dout = compute_loss(m.loss, rec.output, yb)
        act_total, inj = 0.0, None
        if rec.boundary_activations:
            act_total, inj = act_rate_and_injections(rec.boundary_activations, _with_spec(cfg, options.act_spec), lam)
        if mode != "act":
            inj = None
        return backward(m, rec, dout, inj), (loss, act_total, rec.boundary_activations)

    losses = []
    try:
        for tau in range(epochs):
            state.epoch = tau
            link.epoch = tau
            lam = state.lambda_tau
            order = rng.permutation(n)
            losses, objectives, act_rates, grad_rates = [], [], [], []
            for start in range(0, n, bs):
                idx = order[start:start + bs]
                xb, yb = data.X[idx], data.y[idx]
                link.step = state.step
                try:
                    if options.workers > 1:
                        shards = [(data.X[s], data.y[s]) for s in np.array_split(idx, options.workers)]
                        g, infos, _ = data_parallel_round(options.workers, model, shards, options.grad_spec, link=link,
                                                          grad_fn=lambda m, xs, ys: shard_grads(m, xs, ys, lam))
                        loss = float(np.mean([i[0] for i in infos]))
                        act_total = float(np.mean([i[1] for i in infos]))
                        acts = [a for i in infos for a in i[2]]
                    else:
                        g, (loss, act_total, acts) = shard_grads(model, xb, yb, lam)
                except coding.QuantOverflowError as e:
                    raise TrainingDiverged(f"tensor overflowed the quantizer at epoch {tau}, step {state.step}") from e

                if not math.isfinite(loss):
                    raise TrainingDiverged(f"non-finite loss at epoch {tau}, step {state.step}")
                if initial_loss is None:
                    initial_loss = loss
                elif loss > options.divergence_factor * max(initial_loss, 1e-12):
                    losses.append(loss)
                    raise TrainingDiverged(
                        f"loss {loss:.4g} exceeds {options.divergence_factor:g}x initial {initial_loss:.4g} "
                        f"at epoch {tau}, step {state.step}")

                h = None
                if mode == "gct":
                    upd = gct_equivalent_grad(g, state, cfg)
                    h = state.last_h
                elif mode == "wct":
                    upd = [gi + lam * coding.rate_grad(w, cfg.spec, cfg.epsilon) for gi, w in zip(g, model.weights)]
                else:
                    upd = g
                before = model.weights
                after = [w - eta * u for w, u in zip(before, upd)]
                model.set_weights(after)

                objective = loss + lam * act_total if mode == "act" else loss
                losses.append(loss)
                objectives.append(objective)
                act_rates.append(act_total / len(model.shard_points) if model.shard_points else float("nan"))
                grad_rates.append(coding.rate(_concat(g), options.grad_spec))
                if options.callback is not None:
                    options.callback(StepInfo(tau, state.step, loss, act_total, objective, acts, g, upd, h, lam,
                                              before, after))
                state.step += 1

            _, acc = evaluate(model, data, options.act_spec, use_boundary)
            logs.append(EpochLog(
                epoch=tau,
                mean_loss=float(np.mean(losses)),
                accuracy=acc,
                act_rate_bits=float(np.mean(act_rates)),
                grad_rate_bits=float(np.mean(grad_rates)),
                weight_rate_bits=coding.rate(_concat(model.weights), options.weight_spec),
                lambda_tau=lam,
                mean_objective=float(np.mean(objectives)),
            ))
            if mode == "gct":
                state.lambda_tau = cfg.lambda_at(tau + 1)
    except TrainingDiverged as e:
        e.logs, e.partial_losses = logs, losses
        raise
    return model, logs


def _default_rate_spec(mode, options):
    if mode == "gct":
        return options.grad_spec or options.act_spec
    return options.act_spec if mode == "act" else (options.weight_spec or options.act_spec)


def _with_spec(cfg: RateLossConfig, spec: QuantSpec) -> RateLossConfig:
    return cfg if cfg.spec == spec else RateLossConfig(cfg.lambda0, cfg.alpha, cfg.epsilon, spec)


def train_baseline(model, dataset, eta, epochs, rng, options=None):
    return train(model, dataset, eta, epochs, rng, "baseline", None, options)


def train_act(model, dataset, eta, epochs, cfg, rng, options=None):
    return train(model, dataset, eta, epochs, rng, "act", cfg, options)


def train_gct(model, dataset, eta, epochs, cfg, rng, options=None):
    return train(model, dataset, eta, epochs, rng, "gct", cfg, options)


def train_wct(model, dataset, eta, epochs, cfg, rng, options=None):
    return train(model, dataset, eta, epochs, rng, "wct", cfg, options)
