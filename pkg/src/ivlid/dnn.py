"""Feed-forward language classifier: sigmoid hidden layers, softmax output.

Trained from scaled uniform initialization by minibatch SGD with momentum
on mean cross-entropy (plus an optional L2 penalty on weights).
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .data_io import TrialScoreMatrix
from .errors import DimensionError, DivergenceError, DomainError

logger = logging.getLogger(__name__)

SCORE_CAP = 30.0


@dataclass
class DnnModel:
    layer_dims: list
    weights: list  # weights[k] has shape (layer_dims[k], layer_dims[k + 1])
    biases: list
    languages: list = field(default=None)

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        self.weights = [np.asarray(W, dtype=float).reshape(a, b)
                        for W, a, b in zip(self.weights, self.layer_dims[:-1], self.layer_dims[1:])]
        self.biases = [np.asarray(b, dtype=float).reshape(-1) for b in self.biases]
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise DimensionError("layer count does not match the parameter lists")
        if self.languages is None:
            self.languages = [str(i) for i in range(self.layer_dims[-1])]
        self.languages = list(self.languages)
        if len(self.languages) != self.layer_dims[-1]:
            raise DimensionError("one language per output node is required")

    def copy(self):
        return DnnModel(list(self.layer_dims), [W.copy() for W in self.weights],
                        [b.copy() for b in self.biases], list(self.languages))

    def to_dict(self):
        return {"layer_dims": self.layer_dims, "languages": self.languages,
                "hidden_activation": "sigmoid", "output_activation": "softmax",
                "weights": self.weights, "biases": self.biases}

    @classmethod
    def from_dict(cls, d):
        return cls(d["layer_dims"], d["weights"], d["biases"], d["languages"])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_size: int = 128
    epochs: int = 100
    l2: float = 1e-5
    seed: int = 0
    patience: int = 10
    validation_fraction: float = 0.1

    def validate(self):
        if self.learning_rate < 0 or not 0 <= self.momentum < 1:
            raise DomainError("learning_rate must be >= 0 and momentum in [0, 1)")
        if self.batch_size < 1 or self.epochs < 1 or self.patience < 1:
            raise DomainError("batch_size, epochs and patience must be positive")
        if self.l2 < 0:
            raise DomainError("l2 must be non-negative")
        if not 0 < self.validation_fraction <= 0.5:
            raise DomainError("validation_fraction must lie in (0, 0.5]")


def init_dnn(layer_dims, seed=0, languages=None):
    """Uniform ``+-sqrt(6 / (fan_in + fan_out))`` weights, zero biases."""
    layer_dims = [int(d) for d in layer_dims]
    if len(layer_dims) < 2:
        raise DomainError("a network needs at least an input and an output layer")
    if any(d < 1 for d in layer_dims):
        raise DomainError("layer sizes must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return DnnModel(layer_dims, weights, biases, languages)


def _forward(model, X):
    """Hidden activations (including the input) and output log-probabilities."""
    acts = [X]
    h = X
    for W, b in zip(model.weights[:-1], model.biases[:-1]):
        h = expit(h @ W + b)
        acts.append(h)
    logits = h @ model.weights[-1] + model.biases[-1]
    return acts, logits - logsumexp(logits, axis=1, keepdims=True)


def _check_input(model, X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.layer_dims[0]:
        raise DimensionError(f"network expects {model.layer_dims[0]} inputs, got {X.shape[1]}")
    return X


def dnn_log_posteriors(model, X):
    return _forward(model, _check_input(model, X))[1]


def dnn_posteriors(model, v):
    """Softmax outputs for one vector (or each row of a matrix)."""
    v = np.asarray(v, dtype=float)
    out = np.exp(dnn_log_posteriors(model, v))
    return out[0] if v.ndim == 1 else out


def loss_and_gradients(model, X, y, l2=0.0):
    """Mean cross-entropy plus ``l2 / 2 * sum(W**2)`` and its gradients by backpropagation.

    ``y`` holds integer class indices.  Returns ``(loss, weight_grads, bias_grads)``.
    """
    X = _check_input(model, X)
    y = np.asarray(y, dtype=int)
    n = X.shape[0]
    acts, logp = _forward(model, X)
    loss = -np.mean(logp[np.arange(n), y]) + 0.5 * l2 * sum(np.sum(W ** 2) for W in model.weights)
    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    gW = [None] * len(model.weights)
    gb = [None] * len(model.weights)
    for k in range(len(model.weights) - 1, -1, -1):
        gW[k] = acts[k].T @ delta + l2 * model.weights[k]
        gb[k] = delta.sum(axis=0)
        if k:
            h = acts[k]
            delta = (delta @ model.weights[k].T) * h * (1.0 - h)
    return float(loss), gW, gb


def _mean_loss(model, X, y):
    if len(X) == 0:
        return float("nan")
    logp = _forward(model, X)[1]
    return float(-np.mean(logp[np.arange(len(X)), y]))


def train_dnn(model, X, y, cfg=TrainConfig(), return_history=False):
    """Minibatch SGD with momentum and validation early stopping.

    ``y`` holds language names (matching ``model.languages``) or indices.
    The parameters with the lowest validation loss are returned; the
    input model is not modified.
    """
    cfg.validate()
    X = _check_input(model, X)
    y = np.asarray(y)
    if y.dtype.kind in "iu":
        y_idx = y.astype(int)
    else:
        index = {lang: i for i, lang in enumerate(model.languages)}
        unknown = sorted(set(y.tolist()) - set(index))
        if unknown:
            raise DomainError(f"labels {unknown} are not network outputs")
        y_idx = np.array([index[v] for v in y.tolist()], dtype=int)
    if len(y_idx) != X.shape[0]:
        raise DimensionError("X and y differ in length")

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    order = rng.permutation(X.shape[0])
    n_val = max(1, int(round(cfg.validation_fraction * X.shape[0])))
    val, trn = order[:n_val], order[n_val:]
    Xt, yt, Xv, yv = X[trn], y_idx[trn], X[val], y_idx[val]

    net = model.copy()
    vel_W = [np.zeros_like(W) for W in net.weights]
    vel_b = [np.zeros_like(b) for b in net.biases]
    best = net.copy()
    best_val = _mean_loss(net, Xv, yv)
    history = {"train_loss": [_mean_loss(net, Xt, yt)], "val_loss": [best_val]}
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(len(Xt))
        for start in range(0, len(perm), cfg.batch_size):
            batch = perm[start:start + cfg.batch_size]
            loss, gW, gb = loss_and_gradients(net, Xt[batch], yt[batch], cfg.l2)
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch} with learning rate {cfg.learning_rate}")
            for k in range(len(net.weights)):
                vel_W[k] = cfg.momentum * vel_W[k] - cfg.learning_rate * gW[k]
                vel_b[k] = cfg.momentum * vel_b[k] - cfg.learning_rate * gb[k]
                net.weights[k] += vel_W[k]
                net.biases[k] += vel_b[k]
        train_loss = _mean_loss(net, Xt, yt)
        val_loss = _mean_loss(net, Xv, yv)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise DivergenceError(f"non-finite loss at epoch {epoch} with learning rate {cfg.learning_rate}")
        history["train_loss"].append(train_loss)
        history["val_loss"].append(val_loss)
        if val_loss < best_val:
            best_val, best, stale = val_loss, net.copy(), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                logger.debug("early stop at epoch %d (best validation loss %.4f)", epoch, best_val)
                break
    return (best, history) if return_history else best


def posterior_log_odds(log_post):
    """``log p_l - log(mean_{k != l} p_k)`` per column, clipped to +-30."""
    n, L = log_post.shape
    if L < 2:
        raise DomainError("log-odds need at least two classes")
    out = np.empty_like(log_post)
    for l in range(L):
        others = np.delete(log_post, l, axis=1)
        out[:, l] = log_post[:, l] - (logsumexp(others, axis=1) - np.log(L - 1))
    return np.clip(out, -SCORE_CAP, SCORE_CAP)


def score_dnn(model, test):
    scores = posterior_log_odds(dnn_log_posteriors(model, test.vectors))
    return TrialScoreMatrix(test.ids, test.durations, model.languages, scores, kind="dnn")


class DNNClassifier(ClassifierMixin, BaseEstimator):
    """Estimator form of the network; ``hidden_layers`` excludes input and output sizes."""

    def __init__(self, hidden_layers=(600, 600), learning_rate=0.05, momentum=0.9, batch_size=128,
                 epochs=100, l2=1e-5, patience=10, validation_fraction=0.1, seed=0):
        self.hidden_layers = hidden_layers
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.batch_size = batch_size
        self.epochs = epochs
        self.l2 = l2
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.seed = seed

    def _config(self):
        return TrainConfig(self.learning_rate, self.momentum, self.batch_size, self.epochs, self.l2,
                           self.seed, self.patience, self.validation_fraction)

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y, dtype=object)
        self.classes_ = sorted(set(y.tolist()))
        dims = [X.shape[1], *self.hidden_layers, len(self.classes_)]
        init = init_dnn(dims, seed=self.seed, languages=self.classes_)
        self.model_, self.history_ = train_dnn(init, X, y, self._config(), return_history=True)
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return np.exp(dnn_log_posteriors(self.model_, check_array(X, dtype=np.float64)))

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return posterior_log_odds(dnn_log_posteriors(self.model_, check_array(X, dtype=np.float64)))

    def predict(self, X):
        return np.asarray(self.classes_, dtype=object)[np.argmax(self.predict_proba(X), axis=1)]
