"""GMM-UBM language scoring: background model on dev, MAP-adapted language models.

Scores are log-likelihood ratios ``log p(x | lang) - log p(x | ubm)``.
Leave-one-out scores for the training set are produced by removing a
vector's own posterior statistics from its language's MAP statistics, so no
model is refitted.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .data_io import TrialScoreMatrix, pairs_from_matrix
from .errors import DimensionError, DomainError
from .gmm import DIAGONAL, GmmModel, _LOG_2PI, adapt_means, fit_gmm_em, map_adapt


@dataclass
class LanguageModelSet:
    ubm: GmmModel
    per_language: dict
    languages: list
    relevance: float = 16.0
    preprocessing: str = "whiten+norm+lda"

    def __post_init__(self):
        missing = [lang for lang in self.languages if lang not in self.per_language]
        if missing:
            raise DomainError(f"no adapted model for {missing}")
        for lang, m in self.per_language.items():
            if (m.n_components, m.dim, m.covariance_kind) != (
                    self.ubm.n_components, self.ubm.dim, self.ubm.covariance_kind):
                raise DimensionError(f"model for {lang!r} does not match the UBM shape")

    def to_dict(self):
        return {"ubm": self.ubm.to_dict(), "languages": list(self.languages),
                "relevance": self.relevance, "preprocessing": self.preprocessing,
                "means": {lang: self.per_language[lang].means for lang in self.languages}}

    @classmethod
    def from_dict(cls, d):
        ubm = GmmModel.from_dict(d["ubm"])
        per_language = {lang: ubm.with_means(np.asarray(d["means"][lang]).reshape(ubm.means.shape))
                        for lang in d["languages"]}
        return cls(ubm, per_language, list(d["languages"]), d["relevance"], d["preprocessing"])


def _group_rows(labels, languages):
    labels = np.asarray(labels, dtype=object)
    groups = {}
    for lang in languages:
        idx = np.flatnonzero(labels == lang)
        groups[lang] = idx
    return groups


def train_language_models(dev, train, n_components=64, relevance=16.0, covariance_kind=DIAGONAL,
                          max_iter=200, tol=1e-6, var_floor=1e-4, seed=0):
    """UBM on ``dev`` vectors, then one MAP-adapted model per training language."""
    if any(lab is None for lab in train.labels):
        raise DomainError("training corpus must be fully labeled")
    if dev.dim != train.dim:
        raise DimensionError(f"dev dimension {dev.dim} differs from train dimension {train.dim}")
    ubm = fit_gmm_em(dev.vectors, n_components, max_iter=max_iter, tol=tol, var_floor=var_floor,
                     seed=seed, covariance_kind=covariance_kind)
    languages = train.languages
    per_language = {}
    for lang, idx in _group_rows(train.labels, languages).items():
        if idx.size == 0:
            raise DomainError(f"language {lang!r} has no training records")
        per_language[lang] = map_adapt(ubm, train.vectors[idx], relevance)
    return LanguageModelSet(ubm, per_language, languages, relevance)


def score_vectors(models, X):
    """(n, L) log-likelihood ratios of rows of ``X`` against every language model."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != models.ubm.dim:
        raise DimensionError(f"models expect dimension {models.ubm.dim}, got {X.shape[1]}")
    background = models.ubm.log_likelihood(X)
    return np.column_stack([models.per_language[lang].log_likelihood(X) - background
                            for lang in models.languages])


def score_gmm(models, test):
    return TrialScoreMatrix(test.ids, test.durations, models.languages,
                            score_vectors(models, test.vectors), kind="gmm")


def _loglik_per_row_means(ubm, X, means):
    """``log p(x_v)`` where row ``v`` uses its own component means ``means[v]`` (shape (m, C, D))."""
    logw = np.log(ubm.weights)
    m, C, D = means.shape
    if ubm.covariance_kind == DIAGONAL:
        diff = X[:, None, :] - means
        quad = np.sum(diff ** 2 / ubm.covariances[None], axis=2)
        logdet = np.sum(np.log(ubm.covariances), axis=1)
        comp = -0.5 * (D * _LOG_2PI + logdet[None, :] + quad)
    else:
        comp = np.empty((m, C))
        for i in range(C):
            prec = np.linalg.inv(ubm.covariances[i])
            logdet = np.linalg.slogdet(ubm.covariances[i])[1]
            diff = X - means[:, i, :]
            comp[:, i] = -0.5 * (D * _LOG_2PI + logdet + np.sum((diff @ prec) * diff, axis=1))
    return logsumexp(comp + logw, axis=1)


def loo_score_matrix(models, train):
    """Training-set score matrix where each vector's own-language column is leave-one-out.

    Other columns use the full models, which never contained the vector.
    """
    if any(lab is None for lab in train.labels):
        raise DomainError("training corpus must be fully labeled")
    unknown = set(train.languages) - set(models.languages)
    if unknown:
        raise DomainError(f"training labels {sorted(unknown)} have no language model")
    scores = score_vectors(models, train.vectors)
    background = models.ubm.log_likelihood(train.vectors)
    for col, (lang, idx) in enumerate(_group_rows(train.labels, models.languages).items()):
        if idx.size == 0:
            continue
        if idx.size < 2:
            raise DomainError(f"language {lang!r} needs at least 2 records for leave-one-out")
        X = train.vectors[idx]
        gamma = models.ubm.responsibilities(X)
        n_all, F_all = gamma.sum(axis=0), gamma.T @ X
        n_loo = n_all[None, :] - gamma
        F_loo = F_all[None, :, :] - gamma[:, :, None] * X[:, None, :]
        means = adapt_means(models.ubm, n_loo, F_loo, models.relevance)
        scores[idx, col] = _loglik_per_row_means(models.ubm, X, means) - background[idx]
    return TrialScoreMatrix(train.ids, train.durations, models.languages, scores, kind="gmm")


def loo_scores(models, train):
    """Leave-one-out target and non-target ``(score, log duration, language)`` pairs.

    Each training vector yields one target pair and ``L - 1`` non-target
    pairs; the language tag is the language of the scored model.
    """
    return pairs_from_matrix(loo_score_matrix(models, train), train.labels)


def brute_force_loo_matrix(models, train):
    """Reference LOO that re-adapts the own-language model from scratch per held-out vector."""
    scores = score_vectors(models, train.vectors)
    for col, (lang, idx) in enumerate(_group_rows(train.labels, models.languages).items()):
        for pos, row in enumerate(idx):
            keep = np.delete(idx, pos)
            model = map_adapt(models.ubm, train.vectors[keep], models.relevance)
            x = train.vectors[row][None, :]
            scores[row, col] = model.log_likelihood(x)[0] - models.ubm.log_likelihood(x)[0]
    return scores


class GMMLanguageScorer(BaseEstimator):
    """Estimator form of the GMM-UBM subsystem.

    ``fit(X, y, X_background=None)`` trains the UBM on ``X_background``
    (or ``X`` when absent) and adapts one model per class in ``y``.
    ``decision_function`` returns log-likelihood ratios, one column per
    entry of ``classes_``.
    """

    def __init__(self, n_components=64, relevance=16.0, covariance_kind=DIAGONAL, max_iter=200,
                 tol=1e-6, var_floor=1e-4, seed=0):
        self.n_components = n_components
        self.relevance = relevance
        self.covariance_kind = covariance_kind
        self.max_iter = max_iter
        self.tol = tol
        self.var_floor = var_floor
        self.seed = seed

    def fit(self, X, y, X_background=None):
        X = check_array(X, dtype=np.float64)
        bg = X if X_background is None else check_array(X_background, dtype=np.float64)
        ubm = fit_gmm_em(bg, self.n_components, max_iter=self.max_iter, tol=self.tol,
                         var_floor=self.var_floor, seed=self.seed, covariance_kind=self.covariance_kind)
        y = np.asarray(y, dtype=object)
        self.classes_ = sorted(set(y.tolist()))
        per_language = {c: map_adapt(ubm, X[y == c], self.relevance) for c in self.classes_}
        self.models_ = LanguageModelSet(ubm, per_language, self.classes_, self.relevance)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "models_")
        return score_vectors(self.models_, check_array(X, dtype=np.float64))

    def predict(self, X):
        return np.asarray(self.classes_, dtype=object)[np.argmax(self.decision_function(X), axis=1)]
