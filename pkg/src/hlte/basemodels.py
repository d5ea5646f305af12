"""Multilayer perceptrons trained by mini-batch gradient descent.

Three estimators share one numpy network implementation:

* :class:`MLPRegressor` -- weighted mean squared error, linear output;
* :class:`MLPClassifier` -- weighted binary cross-entropy, sigmoid output;
* :class:`BilinearMLP` -- the second-stage objective
  ``mean(omega_i * g(x_i)**2 - 2 * t_i * g(x_i))`` whose per-unit weights may
  be negative, so it cannot be posed as a weighted regression.

All of them follow the scikit-learn estimator protocol (``get_params``,
``fit`` returning ``self``, trailing-underscore fitted attributes) and
standardize inputs with training statistics stored on the model.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_binary, as_matrix, as_vector, as_weights
from .exceptions import ConfigError, DomainError, TrainingDivergedError
from .numerics import RngStream, as_rng_stream

__all__ = [
    "BilinearMLP",
    "MLPClassifier",
    "MLPNetwork",
    "MLPRegressor",
    "PROBABILITY_CLIP",
    "TrainConfig",
    "fit_classifier",
    "fit_regressor",
    "model_from_dict",
    "model_to_dict",
    "outcome_config",
    "predict",
    "propensity_config",
    "second_stage_config",
]

PROBABILITY_CLIP = 1e-3


# --------------------------------------------------------------------------- network

class MLPNetwork:
    """Fully connected ReLU network with a scalar pre-activation output."""

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]):
        if len(weights) != len(biases) or not weights:
            raise DomainError("need matching, non-empty weight and bias lists")
        self.weights = [np.asarray(W, dtype=float) for W in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        for W, b in zip(self.weights, self.biases):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise DomainError("inconsistent layer shapes")
        for W_prev, W in zip(self.weights, self.weights[1:]):
            if W_prev.shape[1] != W.shape[0]:
                raise DomainError("consecutive layers do not chain")
        if self.weights[-1].shape[1] != 1:
            raise DomainError("output layer must have width 1")

    @classmethod
    def initialize(cls, input_dim: int, hidden_widths: Sequence[int], gen: np.random.Generator):
        """Glorot-uniform weights, zero biases."""
        sizes = [int(input_dim), *map(int, hidden_widths), 1]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(gen.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @classmethod
    def zeros(cls, input_dim: int, hidden_widths: Sequence[int]):
        sizes = [int(input_dim), *map(int, hidden_widths), 1]
        return cls([np.zeros((i, o)) for i, o in zip(sizes[:-1], sizes[1:])],
                   [np.zeros(o) for o in sizes[1:]])

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def hidden_widths(self) -> tuple:
        return tuple(W.shape[1] for W in self.weights[:-1])

    def params(self) -> list:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def forward(self, X: np.ndarray, keep: bool = False):
        h = X
        acts = [X] if keep else None
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < last:
                np.maximum(h, 0.0, out=h)
            if keep:
                acts.append(h)
        z = h[:, 0]
        return (z, acts) if keep else z

    def backward(self, acts: list, dz: np.ndarray) -> list:
        """Gradients in the order of :meth:`params` given ``dL/dz``."""
        grads = [None] * (2 * len(self.weights))
        delta = dz[:, None]
        for i in range(len(self.weights) - 1, -1, -1):
            a_in = acts[i]
            grads[2 * i] = a_in.T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = delta @ self.weights[i].T
                delta *= acts[i] > 0
        return grads

    def copy(self) -> "MLPNetwork":
        return MLPNetwork([W.copy() for W in self.weights], [b.copy() for b in self.biases])


# --------------------------------------------------------------------------- losses
# Each loss maps (z, target, weight) to (value, dL/dz).  For the bilinear
# objective ``weight`` carries omega* and ``target`` the pseudo-outcome.

def _mse(z, y, w):
    tw = w.sum()
    if tw <= 0:
        return 0.0, np.zeros_like(z)
    r = z - y
    return float(w @ (r * r)) / tw, (2.0 / tw) * (w * r)


def _expit(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _bce(z, y, w):
    tw = w.sum()
    if tw <= 0:
        return 0.0, np.zeros_like(z)
    p = _expit(z)
    value = float(w @ (np.logaddexp(0.0, z) - y * z)) / tw
    return value, (w * (p - y)) / tw


def _bilinear(z, t, omega):
    n = z.shape[0]
    value = float(omega @ (z * z) - 2.0 * (t @ z)) / n
    return value, (2.0 / n) * (omega * z - t)


LOSSES = {"mse": _mse, "bce": _bce, "bilinear": _bilinear}


def loss_and_gradients(net: MLPNetwork, X, target, weight, loss: str):
    """Loss value and parameter gradients for one batch (used by gradient checks)."""
    z, acts = net.forward(np.asarray(X, dtype=float), keep=True)
    value, dz = LOSSES[loss](z, np.asarray(target, float), np.asarray(weight, float))
    return value, net.backward(acts, dz)


# --------------------------------------------------------------------------- optimizers

class _SGD:
    def __init__(self, params, lr):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.b1, self.b2
        step = self.lr * np.sqrt(1.0 - b2 ** self.t) / (1.0 - b1 ** self.t)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p -= step * m / (np.sqrt(v) + self.eps)


OPTIMIZERS = {"sgd": _SGD, "adam": _Adam}


# --------------------------------------------------------------------------- config

@dataclass(frozen=True)
class TrainConfig:
    """Architecture and training hyperparameters for one network."""

    hidden_widths: tuple = (20, 20, 10, 10)
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    output_head: str = "linear"
    optimizer: str = "adam"

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if not self.hidden_widths or min(self.hidden_widths) < 1:
            raise ConfigError("hidden widths must be positive counts")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be at least 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.output_head not in ("linear", "sigmoid"):
            raise ConfigError(f"unknown output head {self.output_head!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")

    def with_seed(self, seed) -> "TrainConfig":
        if isinstance(seed, RngStream):
            seed = seed.int_seed()
        return replace(self, seed=int(seed))

    def estimator_params(self) -> dict:
        return dict(hidden_widths=self.hidden_widths, epochs=self.epochs,
                    batch_size=self.batch_size, learning_rate=self.learning_rate,
                    optimizer=self.optimizer, random_state=self.seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_widths"] = list(self.hidden_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def propensity_config(**overrides) -> TrainConfig:
    """Two hidden layers (20, 10) with a sigmoid head, 20 epochs."""
    return replace(TrainConfig(hidden_widths=(20, 10), output_head="sigmoid"), **overrides)


def outcome_config(**overrides) -> TrainConfig:
    """Four hidden layers (20, 20, 10, 10), linear head, 20 epochs."""
    return replace(TrainConfig(), **overrides)


def second_stage_config(**overrides) -> TrainConfig:
    """Outcome architecture trained for 40 epochs."""
    return replace(TrainConfig(epochs=40), **overrides)


# --------------------------------------------------------------------------- estimators

class _BaseMLP(BaseEstimator):
    _loss = "mse"
    _head = "linear"

    def __init__(self, hidden_widths=(20, 20, 10, 10), epochs=20, batch_size=64,
                 learning_rate=1e-3, optimizer="adam", random_state=0, standardize=True,
                 init_output_bias=True):
        self.hidden_widths = hidden_widths
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.random_state = random_state
        self.standardize = standardize
        self.init_output_bias = init_output_bias

    def _check_params(self):
        TrainConfig(hidden_widths=self.hidden_widths, epochs=self.epochs,
                    batch_size=self.batch_size, learning_rate=self.learning_rate,
                    optimizer=self.optimizer)

    def _initial_bias(self, target, weight) -> float:
        return 0.0

    def _fit_network(self, X, target, weight):
        self._check_params()
        gen = as_rng_stream(self.random_state).generator()
        n, d = X.shape
        if self.standardize:
            mean = X.mean(axis=0)
            scale = X.std(axis=0)
            scale[scale < 1e-12] = 1.0
        else:
            mean, scale = np.zeros(d), np.ones(d)
        Xs = (X - mean) / scale
        net = MLPNetwork.initialize(d, self.hidden_widths, gen)
        if self.init_output_bias:
            net.biases[-1][0] = self._initial_bias(target, weight)
        params = net.params()
        opt = OPTIMIZERS[self.optimizer](params, self.learning_rate)
        loss_fn = LOSSES[self._loss]
        bs = int(self.batch_size)
        curve = []
        # overflow is caught below as divergence, so silence numpy's warning
        with np.errstate(over="ignore", invalid="ignore"):
            for epoch in range(int(self.epochs)):
                perm = gen.permutation(n)
                total = 0.0
                for start in range(0, n, bs):
                    idx = perm[start:start + bs]
                    z, acts = net.forward(Xs[idx], keep=True)
                    value, dz = loss_fn(z, target[idx], weight[idx])
                    if not np.isfinite(value):
                        raise TrainingDivergedError("non-finite training loss", epoch=epoch)
                    opt.step(params, net.backward(acts, dz))
                    total += value * idx.size
                curve.append(total / n)
        if not all(np.all(np.isfinite(p)) for p in params):
            raise TrainingDivergedError("non-finite network weights", epoch=int(self.epochs) - 1)
        self.network_ = net
        self.x_mean_ = mean
        self.x_scale_ = scale
        self.n_features_in_ = d
        self.loss_curve_ = curve
        return self

    def decision_function(self, X) -> np.ndarray:
        """Pre-activation network output."""
        check_is_fitted(self, "network_")
        X = as_matrix(X, n_features=self.n_features_in_)
        return self.network_.forward((X - self.x_mean_) / self.x_scale_)


class MLPRegressor(RegressorMixin, _BaseMLP):
    """Regression network minimizing weighted mean squared error."""

    def _initial_bias(self, target, weight):
        tw = weight.sum()
        return float(weight @ target / tw) if tw > 0 else 0.0

    def fit(self, X, y, sample_weight=None):
        X = as_matrix(X)
        y = as_vector(y, n=X.shape[0])
        if X.shape[0] < 1:
            raise DomainError("need at least one training row")
        w = as_weights(sample_weight, n=X.shape[0])
        return self._fit_network(X, y, w)

    def predict(self, X) -> np.ndarray:
        return self.decision_function(X)


class MLPClassifier(ClassifierMixin, _BaseMLP):
    """Binary classifier with a sigmoid head trained on cross-entropy.

    :meth:`predict_probability` clips outputs to ``[clip, 1 - clip]`` so that
    ratios of estimated probabilities stay finite downstream.
    """

    _loss = "bce"

    def __init__(self, hidden_widths=(20, 10), epochs=20, batch_size=64, learning_rate=1e-3,
                 optimizer="adam", random_state=0, standardize=True, init_output_bias=True,
                 clip=PROBABILITY_CLIP):
        super().__init__(hidden_widths=hidden_widths, epochs=epochs, batch_size=batch_size,
                         learning_rate=learning_rate, optimizer=optimizer,
                         random_state=random_state, standardize=standardize,
                         init_output_bias=init_output_bias)
        self.clip = clip

    def _initial_bias(self, target, weight):
        tw = weight.sum()
        p = float(weight @ target / tw) if tw > 0 else 0.5
        p = min(max(p, 0.01), 0.99)
        return float(np.log(p / (1.0 - p)))

    def fit(self, X, y, sample_weight=None):
        X = as_matrix(X)
        y = as_binary(y, n=X.shape[0])
        w = as_weights(sample_weight, n=X.shape[0])
        self.classes_ = np.array([0, 1])
        return self._fit_network(X, y, w)

    def predict_probability(self, X) -> np.ndarray:
        z = self.decision_function(X)
        p = _expit(z)
        if self.clip:
            p = np.clip(p, self.clip, 1.0 - self.clip)
        return p

    def predict_proba(self, X) -> np.ndarray:
        p = self.predict_probability(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        return (self.predict_probability(X) >= 0.5).astype(int)


class BilinearMLP(_BaseMLP):
    """Minimizes ``mean(omega * g(x)**2 - 2 * t * g(x))`` over the network ``g``.

    With strictly positive ``omega`` this has the same minimizer as weighted
    least squares on ``t / omega``; the point of this class is that individual
    ``omega`` values may be negative.
    """

    _loss = "bilinear"

    def _initial_bias(self, target, weight):
        tw = weight.sum()
        return float(target.sum() / tw) if tw > 0 else 0.0

    def fit(self, X, omega_star, pseudo_outcome):
        X = as_matrix(X)
        om = as_vector(omega_star, n=X.shape[0], name="omega_star")
        t = as_vector(pseudo_outcome, n=X.shape[0], name="pseudo_outcome")
        if X.shape[0] < 1:
            raise DomainError("need at least one training row")
        self.weight_sum_ = float(om.sum())
        return self._fit_network(X, t, om)

    def predict(self, X) -> np.ndarray:
        return self.decision_function(X)


# --------------------------------------------------------------------------- functional surface

def _estimator_for(config: TrainConfig, cls):
    return cls(**config.estimator_params())


def fit_regressor(inputs, targets, weights=None, config: Optional[TrainConfig] = None) -> MLPRegressor:
    config = config or outcome_config()
    if config.output_head != "linear":
        raise ConfigError("regressors use a linear head")
    return _estimator_for(config, MLPRegressor).fit(inputs, targets, sample_weight=weights)


def fit_classifier(inputs, labels, config: Optional[TrainConfig] = None) -> MLPClassifier:
    config = config or propensity_config()
    if config.output_head != "sigmoid":
        raise ConfigError("classifiers use a sigmoid head")
    return _estimator_for(config, MLPClassifier).fit(inputs, labels)


def predict(model, inputs) -> np.ndarray:
    """Probabilities for classifiers, raw outputs otherwise."""
    if isinstance(model, MLPClassifier):
        return model.predict_probability(inputs)
    return model.predict(inputs)


# --------------------------------------------------------------------------- serialization

_CLASSES = {cls.__name__: cls for cls in (MLPRegressor, MLPClassifier, BilinearMLP)}


def _jsonable(value):
    if isinstance(value, RngStream):
        return {"seed": value.seed, "stream_id": value.stream_id}
    if isinstance(value, tuple):
        return list(value)
    return value


def model_to_dict(model: _BaseMLP) -> dict:
    check_is_fitted(model, "network_")
    net = model.network_
    return {
        "type": type(model).__name__,
        "head": model._head if not isinstance(model, MLPClassifier) else "sigmoid",
        "params": {k: _jsonable(v) for k, v in model.get_params().items()},
        "layers": [
            {"shape": list(W.shape), "weights": W.ravel().tolist(), "bias": b.tolist()}
            for W, b in zip(net.weights, net.biases)
        ],
        "x_mean": model.x_mean_.tolist(),
        "x_scale": model.x_scale_.tolist(),
    }


def model_from_dict(doc: dict) -> _BaseMLP:
    try:
        cls = _CLASSES[doc["type"]]
    except KeyError:
        raise DomainError(f"unknown model type {doc.get('type')!r}") from None
    params = dict(doc["params"])
    if isinstance(params.get("random_state"), dict):
        params["random_state"] = RngStream(**params["random_state"])
    params["hidden_widths"] = tuple(params["hidden_widths"])
    model = cls(**params)
    weights = [np.array(layer["weights"], dtype=float).reshape(layer["shape"]) for layer in doc["layers"]]
    biases = [np.array(layer["bias"], dtype=float) for layer in doc["layers"]]
    model.network_ = MLPNetwork(weights, biases)
    model.x_mean_ = np.array(doc["x_mean"], dtype=float)
    model.x_scale_ = np.array(doc["x_scale"], dtype=float)
    model.n_features_in_ = model.network_.input_dim
    if cls is MLPClassifier:
        model.classes_ = np.array([0, 1])
    return model


def model_to_json(model) -> str:
    return json.dumps(model_to_dict(model))


def model_from_json(text: str):
    return model_from_dict(json.loads(text))
