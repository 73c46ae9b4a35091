"""Desk-scale classifiers with closed-form gradients over a flat parameter vector.

Parameter layout:

* logistic: ``W`` (C x d) then ``b`` (C)
* mlp: ``W1`` (h x d), ``b1`` (h), ``W2`` (C x h), ``b2`` (C), tanh hidden layer

Losses are averaged over the batch.  ``mse_onehot`` compares softmax
probabilities against one-hot targets and averages over all ``N x C``
entries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax

from ..errors import ConfigError, DimensionMismatch

LOSSES = ("cross_entropy", "mse_onehot")


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "logistic"
    input_dim: int = 10
    n_classes: int = 2
    hidden_units: int = 16
    loss: str = "cross_entropy"

    def __post_init__(self):
        if self.kind not in ("logistic", "mlp"):
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.input_dim < 1 or self.n_classes < 2 or self.hidden_units < 1:
            raise ConfigError("model dimensions must be positive (n_classes >= 2)")


class Model:
    def __init__(self, spec: ModelSpec):
        self.spec = spec
        d, c, h = spec.input_dim, spec.n_classes, spec.hidden_units
        if spec.kind == "logistic":
            self._shapes = [(c, d), (c,)]
        else:
            self._shapes = [(h, d), (h,), (c, h), (c,)]
        self.n_params = int(sum(np.prod(s) for s in self._shapes))

    def unpack(self, params: np.ndarray) -> list[np.ndarray]:
        params = np.asarray(params, dtype=np.float64)
        if params.size != self.n_params:
            raise DimensionMismatch(f"expected {self.n_params} parameters, got {params.size}")
        out, pos = [], 0
        for shape in self._shapes:
            size = int(np.prod(shape))
            out.append(params[pos : pos + size].reshape(shape))
            pos += size
        return out

    def init_params(self, seed: int) -> np.ndarray:
        if self.spec.kind == "logistic":
            return np.zeros(self.n_params)
        rng = np.random.default_rng([seed, 0x1417])
        w1, b1, w2, b2 = (np.zeros(s) for s in self._shapes)
        w1 = rng.normal(0, 1 / np.sqrt(self.spec.input_dim), w1.shape)
        w2 = rng.normal(0, 1 / np.sqrt(self.spec.hidden_units), w2.shape)
        return np.concatenate([w1.ravel(), b1, w2.ravel(), b2])

    def _check(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.spec.input_dim:
            raise DimensionMismatch(
                f"model expects {self.spec.input_dim} features, got {x.shape[1]}"
            )
        return x

    def logits(self, params, x) -> np.ndarray:
        x = self._check(x)
        if self.spec.kind == "logistic":
            w, b = self.unpack(params)
            return x @ w.T + b
        w1, b1, w2, b2 = self.unpack(params)
        return np.tanh(x @ w1.T + b1) @ w2.T + b2

    def predict_proba(self, params, x) -> np.ndarray:
        return softmax(self.logits(params, x), axis=1)

    def predict(self, params, x) -> np.ndarray:
        return np.argmax(self.logits(params, x), axis=1)

    def as_callable(self, params):
        """Frozen ``features -> probabilities`` map, for per-client evaluation."""
        params = np.array(params, dtype=np.float64)
        return lambda x: self.predict_proba(params, x)

    def loss(self, params, x, y) -> float:
        z = self.logits(params, x)
        y = np.asarray(y, dtype=np.int64)
        if self.spec.loss == "cross_entropy":
            return float(-np.mean(log_softmax(z, axis=1)[np.arange(y.size), y]))
        p = softmax(z, axis=1)
        target = np.zeros_like(p)
        target[np.arange(y.size), y] = 1.0
        return float(np.mean((p - target) ** 2))

    def accuracy(self, params, x, y) -> float:
        return float(np.mean(self.predict(params, x) == np.asarray(y)))

    def _dlogits(self, z: np.ndarray, y: np.ndarray) -> np.ndarray:
        n, c = z.shape
        p = softmax(z, axis=1)
        target = np.zeros_like(p)
        target[np.arange(n), y] = 1.0
        if self.spec.loss == "cross_entropy":
            return (p - target) / n
        g = 2 * (p - target) / (n * c)
        return p * (g - np.sum(g * p, axis=1, keepdims=True))

    def gradient(self, params, x, y) -> np.ndarray:
        """Exact gradient of the batch-mean loss with respect to the flat parameters."""
        x = self._check(x)
        y = np.asarray(y, dtype=np.int64)
        if self.spec.kind == "logistic":
            w, b = self.unpack(params)
            dz = self._dlogits(x @ w.T + b, y)
            return np.concatenate([(dz.T @ x).ravel(), dz.sum(axis=0)])
        w1, b1, w2, b2 = self.unpack(params)
        hidden = np.tanh(x @ w1.T + b1)
        dz = self._dlogits(hidden @ w2.T + b2, y)
        dhidden = (dz @ w2) * (1 - hidden**2)
        return np.concatenate(
            [(dhidden.T @ x).ravel(), dhidden.sum(axis=0), (dz.T @ hidden).ravel(), dz.sum(axis=0)]
        )


def local_gradient(model: Model, params, features, labels) -> np.ndarray:
    features = np.asarray(features)
    if features.shape[0] == 0:
        raise ValueError("batch must not be empty")
    return model.gradient(params, features, labels)
