"""scikit-learn style wrappers: GG shape fitting, EG quantization and a rate-constrained MLP."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import coding, ggdist, gginit, metrics, nn
from .coding import QuantSpec
from .training import Dataset, RateLossConfig, TrainOptions, train

__all__ = ["GGFit", "EGQuantizer", "RateConstrainedMLP"]


class GGFit(BaseEstimator):
    """Moment-ratio GG fit of all entries of ``X``."""

    def fit(self, X, y=None):
        X = check_array(X, ensure_2d=False, allow_nd=True)
        rep = ggdist.fit_shape(X)
        self.params_ = rep.params
        self.goodness_ = rep.goodness
        self.n_samples_fit_ = rep.sample_count
        return self

    @property
    def nu_(self):
        check_is_fitted(self, "params_")
        return self.params_.nu

    def score(self, X, y=None):
        """Negative histogram L1 distance of ``X`` to the fitted density (higher is better)."""
        check_is_fitted(self, "params_")
        x = check_array(X, ensure_2d=False, allow_nd=True).ravel()
        return -ggdist.fit_goodness(x, self.params_, float(x.mean()), float(x.std()))

    def sample(self, n_samples=1, random_state=None):
        check_is_fitted(self, "params_")
        return ggdist.sample(self.params_, n_samples, np.random.default_rng(random_state))


class EGQuantizer(TransformerMixin, BaseEstimator):
    """Quantize to step ``2**-n``; ``transform`` returns the dequantized values."""

    def __init__(self, n=8, k=0):
        self.n = n
        self.k = k

    def _spec(self):
        return QuantSpec(self.n, self.k)

    def fit(self, X, y=None):
        X = check_array(X, ensure_2d=False, allow_nd=True)
        self.stats_ = metrics.tensor_stats(X, self._spec())
        self.n_features_in_ = X.shape[1] if X.ndim == 2 else 1
        return self

    def transform(self, X):
        check_is_fitted(self, "stats_")
        X = check_array(X, ensure_2d=False, allow_nd=True)
        return coding.quantize(X, self._spec()).dequantize()

    def encode(self, X, tensor_id=0) -> coding.EncodedBlob:
        X = check_array(X, ensure_2d=False, allow_nd=True)
        spec = self._spec()
        return coding.eg_encode(coding.zigzag_map(coding.quantize(X, spec).values), spec.k, tensor_id, spec.n)

    def decode(self, blob: coding.EncodedBlob) -> np.ndarray:
        return coding.dequantize(coding.zigzag_unmap(coding.eg_decode(blob)), QuantSpec(blob.n, blob.k))

    def rate(self, X) -> float:
        return coding.rate(check_array(X, ensure_2d=False, allow_nd=True), self._spec())


class RateConstrainedMLP(ClassifierMixin, BaseEstimator):
    """ReLU MLP classifier trained in one of the baseline/act/gct/wct modes."""

    def __init__(self, hidden_layer_sizes=(64, 64), mode="baseline", lambda0=0.0, alpha=1.0, epsilon=1e-8,
                 eta=0.1, epochs=10, batch_size=32, init_nu=2.0, shard_points=None, n=8, k=0, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.mode = mode
        self.lambda0 = lambda0
        self.alpha = alpha
        self.epsilon = epsilon
        self.eta = eta
        self.epochs = epochs
        self.batch_size = batch_size
        self.init_nu = init_nu
        self.shard_points = shard_points
        self.n = n
        self.k = k
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_ = unique_labels(y)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        yi = np.searchsorted(self.classes_, y)
        sizes = [X.shape[1], *self.hidden_layer_sizes, len(self.classes_)]
        shard = self.shard_points
        if shard is None:
            shard = [2 * i + 1 for i in range(len(self.hidden_layer_sizes))] if self.mode == "act" else []
        init_rng, train_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(self.random_state).spawn(2))
        model = nn.build_model(nn.mlp_layers(sizes), shard_points=shard)
        model = gginit.init_model(model, gginit.InitSpec(nu=self.init_nu), init_rng)
        spec = QuantSpec(self.n, self.k)
        cfg = RateLossConfig(self.lambda0, self.alpha, self.epsilon, spec)
        opts = TrainOptions(batch_size=min(self.batch_size, len(X)), act_spec=spec)
        self.model_, self.logs_ = train(model, Dataset(X, yi), self.eta, self.epochs, train_rng, self.mode, cfg,
                                        opts)
        self.n_features_in_ = X.shape[1]
        return self

    def _logits(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, model expects {self.n_features_in_}")
        spec = QuantSpec(self.n, self.k)
        boundary = (lambda i, a: coding.quantize(a, spec).dequantize()) if self.model_.shard_points else None
        return nn.forward(self.model_, X, boundary=boundary).output

    def predict_proba(self, X):
        z = self._logits(X)
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        z = self._logits(X)
        return self.classes_[np.argmax(z, axis=1)]
