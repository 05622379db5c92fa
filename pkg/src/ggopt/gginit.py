"""GG weight initialization with activation-dependent variance gain.

Weights of a layer with fan-in ``d_in`` are drawn from
``GG(0, beta_w, nu)`` with ``beta_w = sqrt(xi / d_in * Gamma(1/nu) / Gamma(3/nu))``,
which gives variance ``xi / d_in`` for every shape. ``nu = 2`` is He
initialization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ggdist
from .nn import Model

__all__ = ["InitSpec", "xi_for_activation", "init_layer", "init_model", "he_spec"]


@dataclass(frozen=True)
class InitSpec:
    nu: float = 2.0
    xi: float | None = None  # None: chosen per layer from the following activation
    seed: int = 0

    def __post_init__(self):
        if not ggdist.NU_MIN <= self.nu <= ggdist.NU_MAX:
            raise ValueError(f"nu must lie in [{ggdist.NU_MIN}, {ggdist.NU_MAX}], got {self.nu}")
        if self.xi is not None and not self.xi > 0:
            raise ValueError(f"xi must be positive, got {self.xi}")


def he_spec(seed: int = 0) -> InitSpec:
    return InitSpec(nu=2.0, seed=seed)


def xi_for_activation(kind: str | None, slope: float | None = None) -> float:
    if kind == "leaky_relu":
        if slope is None:
            raise ValueError("leaky_relu needs a slope")
        return 2.0 / (1.0 + slope * slope)
    if slope is not None:
        raise ValueError(f"slope only applies to leaky_relu, not {kind!r}")
    if kind in (None, "none", "sigmoid", "identity"):
        return 1.0
    if kind == "relu":
        return 2.0
    raise ValueError(f"no variance gain defined for activation {kind!r}")


def init_layer(d_in: int, d_out: int, spec: InitSpec, rng: np.random.Generator) -> np.ndarray:
    """``d_in x d_out`` GG draws with variance ``xi / d_in`` (xi defaults to 1)."""
    return _gg_weights(d_in, d_out, spec.nu, 1.0 if spec.xi is None else spec.xi, rng)


def _gg_weights(d_in, d_out, nu, xi, rng):
    if d_in < 1 or d_out < 1:
        raise ValueError(f"layer dims must be >= 1, got {d_in}x{d_out}")
    beta = math.sqrt(xi / d_in) * math.exp(0.5 * (math.lgamma(1.0 / nu) - math.lgamma(3.0 / nu)))
    return ggdist.sample(ggdist.GGParams(0.0, beta, nu), d_in * d_out, rng).reshape(d_in, d_out)


def _following_activation(model: Model, i: int):
    nxt = model.layers[i + 1] if i + 1 < len(model.layers) else None
    if nxt is not None and nxt.kind in ("relu", "leaky_relu", "sigmoid"):
        return nxt.kind, nxt.slope
    return None, None


def init_model(model: Model, spec: InitSpec, rng: np.random.Generator | None = None) -> Model:
    """Initialize every dense and attention weight in place order; biases are zero.

    Returns a new model; the input is not modified.
    """
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    out = model.copy()
    params = []
    for i, (layer, p) in enumerate(zip(out.layers, out.params)):
        if layer.kind == "dense":
            xi = spec.xi if spec.xi is not None else xi_for_activation(*_following_activation(out, i))
            params.append([_gg_weights(layer.d_in, layer.d_out, spec.nu, xi, rng), np.zeros(layer.d_out)])
        elif layer.kind == "attention":
            xi = spec.xi if spec.xi is not None else 1.0
            params.append([_gg_weights(layer.d_in, layer.d_in, spec.nu, xi, rng) for _ in range(4)])
        else:
            params.append([])
    out.params = params
    return out
