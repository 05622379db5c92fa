"""Generalized-Gaussian tensor modelling, Exp-Golomb coding and rate-constrained training."""

from . import coding, comm, ggdist, gginit, metrics, nn, training
from .coding import QuantSpec
from .estimators import EGQuantizer, GGFit, RateConstrainedMLP
from .ggdist import FitReport, GGParams
from .training import RateLossConfig, TrainOptions

__all__ = ["coding", "comm", "ggdist", "gginit", "metrics", "nn", "training", "QuantSpec", "GGParams", "FitReport",
           "RateLossConfig", "TrainOptions", "GGFit", "EGQuantizer", "RateConstrainedMLP"]
__version__ = "0.1.0"
