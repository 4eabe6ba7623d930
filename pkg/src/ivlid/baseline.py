"""Cosine scoring against per-language average i-vectors on the unit sphere."""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .data_io import TrialScoreMatrix
from .errors import DimensionError, DomainError

UNIT_TOL = 1e-9
# 9-digit text files perturb a unit norm by up to ~1e-8; corpus scoring
# re-projects vectors this close to the sphere before the strict check
FILE_UNIT_TOL = 1e-6


@dataclass
class CosineModel:
    language_means: np.ndarray
    languages: list

    def __post_init__(self):
        self.language_means = np.atleast_2d(np.asarray(self.language_means, dtype=float))
        self.languages = list(self.languages)
        if self.language_means.shape[0] != len(self.languages):
            raise DimensionError("one mean per language is required")

    def to_dict(self):
        return {"languages": self.languages, "language_means": self.language_means}

    @classmethod
    def from_dict(cls, d):
        return cls(d["language_means"], d["languages"])


def _unit_mean(rows, language):
    total = rows.sum(axis=0)
    norm = np.linalg.norm(total)
    if norm <= 1e-12 * max(len(rows), 1):
        raise DomainError(f"training vectors of {language!r} average to zero")
    return total / norm


def train_cosine(train):
    """Average each language's (already normalized) vectors and re-project to unit length."""
    labels = np.asarray(train.labels, dtype=object)
    languages = train.languages
    if not languages:
        raise DomainError("training corpus has no labeled records")
    means = []
    for lang in languages:
        rows = train.vectors[labels == lang]
        if len(rows) == 0:
            raise DomainError(f"language {lang!r} has no training records")
        means.append(_unit_mean(rows, lang))
    return CosineModel(np.vstack(means), languages)


def _check_unit(V):
    norms = np.linalg.norm(V, axis=1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise DomainError("cosine scoring expects unit-norm inputs")


def score_cosine(model, v):
    """Inner products of unit vector(s) ``v`` with every language mean."""
    v = np.asarray(v, dtype=float)
    single = v.ndim == 1
    V = np.atleast_2d(v)
    if V.shape[1] != model.language_means.shape[1]:
        raise DimensionError(f"model dimension is {model.language_means.shape[1]}, input is {V.shape[1]}")
    _check_unit(V)
    scores = np.clip(V @ model.language_means.T, -1.0, 1.0)
    return scores[0] if single else scores


def _renormalize_file_vectors(V):
    norms = np.linalg.norm(V, axis=1, keepdims=True)
    if np.any(np.abs(norms - 1.0) > FILE_UNIT_TOL):
        raise DomainError("cosine scoring expects unit-norm inputs")
    return V / norms


def score_cosine_corpus(model, test):
    """Score a corpus read from disk; serialization rounding of the norm is absorbed."""
    V = _renormalize_file_vectors(test.vectors)
    return TrialScoreMatrix(test.ids, test.durations, model.languages, score_cosine(model, V), kind="cosine")


def loo_cosine_matrix(model, train):
    """Training-set scores where a vector's own-language mean is recomputed without it."""
    V = _renormalize_file_vectors(train.vectors)
    scores = score_cosine(model, V)
    labels = np.asarray(train.labels, dtype=object)
    for col, lang in enumerate(model.languages):
        idx = np.flatnonzero(labels == lang)
        if idx.size < 2:
            raise DomainError(f"language {lang!r} needs at least 2 records for leave-one-out")
        rows = V[idx]
        rest = rows.sum(axis=0)[None, :] - rows
        rest /= np.linalg.norm(rest, axis=1, keepdims=True)
        scores[idx, col] = np.clip(np.sum(rest * rows, axis=1), -1.0, 1.0)
    return TrialScoreMatrix(train.ids, train.durations, model.languages, scores, kind="cosine")


class CosineScorer(BaseEstimator):
    """Estimator form of the cosine baseline (inputs must already be whitened and normalized)."""

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y, dtype=object)
        self.classes_ = sorted(set(y.tolist()))
        self.model_ = CosineModel(np.vstack([_unit_mean(X[y == c], c) for c in self.classes_]),
                                  self.classes_)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return score_cosine(self.model_, check_array(X, dtype=np.float64))

    def predict(self, X):
        return np.asarray(self.classes_, dtype=object)[np.argmax(self.decision_function(X), axis=1)]
