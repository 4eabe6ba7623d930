"""Gaussian mixtures: EM fitting, log-likelihood, and mean-only MAP adaptation."""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, DensityMixin
from sklearn.cluster import KMeans
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import DimensionError, DomainError, NumericError

logger = logging.getLogger(__name__)

DIAGONAL = "diagonal"
FULL = "full"
_LOG_2PI = np.log(2.0 * np.pi)
COLLAPSE_WEIGHT = 1e-10


@dataclass
class GmmModel:
    """Weights (C,), means (C, D) and covariances (C, D) diagonal or (C, D, D) full."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    covariance_kind: str = DIAGONAL
    _chol: np.ndarray = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.covariances = np.asarray(self.covariances, dtype=float)
        C, D = self.means.shape
        if self.covariance_kind not in (DIAGONAL, FULL):
            raise DomainError(f"unknown covariance kind {self.covariance_kind!r}")
        if self.weights.shape != (C,):
            raise DimensionError("weights and means disagree on the component count")
        expected = (C, D) if self.covariance_kind == DIAGONAL else (C, D, D)
        self.covariances = self.covariances.reshape(expected)
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise DomainError("mixture weights must be positive and sum to 1")

    @property
    def n_components(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    def _cholesky(self):
        if self._chol is None:
            try:
                self._chol = np.stack([linalg.cholesky(S, lower=True) for S in self.covariances])
            except linalg.LinAlgError:
                raise NumericError("covariance matrix is not positive definite") from None
        return self._chol

    def component_log_densities(self, X):
        """(n, C) matrix of ``log N(x; mu_i, Sigma_i)`` (weights excluded)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise DimensionError(f"model dimension is {self.dim}, data dimension is {X.shape[1]}")
        n, D = X.shape
        out = np.empty((n, self.n_components))
        if self.covariance_kind == DIAGONAL:
            prec = 1.0 / self.covariances
            logdet = np.sum(np.log(self.covariances), axis=1)
            # expand the quadratic form; fixed summation order keeps results reproducible
            quad = ((X ** 2) @ prec.T - 2.0 * X @ (self.means * prec).T
                    + np.sum(self.means ** 2 * prec, axis=1))
            out[:] = -0.5 * (D * _LOG_2PI + logdet + quad)
        else:
            chol = self._cholesky()
            for i in range(self.n_components):
                z = linalg.solve_triangular(chol[i], (X - self.means[i]).T, lower=True)
                logdet = 2.0 * np.sum(np.log(np.diag(chol[i])))
                out[:, i] = -0.5 * (D * _LOG_2PI + logdet + np.sum(z ** 2, axis=0))
        return out

    def weighted_log_densities(self, X):
        return self.component_log_densities(X) + np.log(self.weights)

    def log_likelihood(self, X):
        """Per-row ``log sum_i w_i N(x; mu_i, Sigma_i)``."""
        return logsumexp(self.weighted_log_densities(X), axis=1)

    def responsibilities(self, X):
        wl = self.weighted_log_densities(X)
        return np.exp(wl - logsumexp(wl, axis=1, keepdims=True))

    def with_means(self, means):
        return GmmModel(self.weights.copy(), means, self.covariances.copy(), self.covariance_kind)

    def to_dict(self):
        return {"covariance_kind": self.covariance_kind, "n_components": self.n_components,
                "dim": self.dim, "weights": self.weights, "means": self.means,
                "covariances": self.covariances}

    @classmethod
    def from_dict(cls, d):
        return cls(d["weights"], np.asarray(d["means"]).reshape(d["n_components"], d["dim"]),
                   d["covariances"], d["covariance_kind"])


def gmm_log_likelihood(model, x):
    """Log density of a single vector (or each row of a matrix) under ``model``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.shape[0] != model.dim:
            raise DimensionError(f"model dimension is {model.dim}, vector dimension is {x.shape[0]}")
        return float(model.log_likelihood(x[None, :])[0])
    return model.log_likelihood(x)


# ---------------------------------------------------------------------------
# EM


def _check_data(data):
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    if data.ndim != 2:
        raise DimensionError("data must be an (n, D) matrix")
    if not np.all(np.isfinite(data)):
        raise NumericError("data contains non-finite values")
    return data


def variance_floor(data, var_floor):
    """Per-dimension floor: ``var_floor`` times the global variance (with an absolute minimum)."""
    return np.maximum(var_floor * data.var(axis=0), 1e-12)


def _floor_covariances(covs, kind, floor):
    if kind == DIAGONAL:
        return np.maximum(covs, floor)
    out = np.empty_like(covs)
    scalar = floor.min()
    for i, S in enumerate(covs):
        S = 0.5 * (S + S.T)
        evals, evecs = np.linalg.eigh(S)
        if evals[0] < scalar:
            S = (evecs * np.maximum(evals, scalar)) @ evecs.T
            S = 0.5 * (S + S.T)
        out[i] = S
    return out


def m_step(data, resp, kind, floor):
    """Weights, means and floored covariances from responsibilities."""
    nk = resp.sum(axis=0)
    weights = nk / nk.sum()
    safe = np.where(nk > 0, nk, 1.0)
    means = (resp.T @ data) / safe[:, None]
    if kind == DIAGONAL:
        covs = (resp.T @ (data ** 2)) / safe[:, None] - means ** 2
    else:
        C, D = means.shape
        covs = np.empty((C, D, D))
        for i in range(C):
            diff = data - means[i]
            covs[i] = (resp[:, i] * diff.T) @ diff / safe[i]
    return weights, means, _floor_covariances(covs, kind, floor), nk


def _single_gaussian(data, kind, floor):
    mean = data.mean(axis=0)
    diff = data - mean
    if kind == DIAGONAL:
        cov = np.mean(diff ** 2, axis=0)[None, :]
    else:
        cov = (diff.T @ diff / data.shape[0])[None, :, :]
    return GmmModel(np.ones(1), mean[None, :], _floor_covariances(cov, kind, floor), kind)


def _safe_model(weights, means, covs, kind):
    weights = np.maximum(weights, np.finfo(float).tiny)
    return GmmModel(weights / weights.sum(), means, covs, kind)


def fit_gmm_em(data, c, max_iter=200, tol=1e-6, var_floor=1e-4, seed=0,
               covariance_kind=DIAGONAL, return_history=False):
    """Maximum-likelihood mixture fit by EM from a seeded k-means++ start.

    ``tol`` is compared with the gain in mean per-sample log-likelihood.
    With ``return_history`` the per-iteration mean log-likelihood sequence
    is returned as well.
    """
    data = _check_data(data)
    n, D = data.shape
    if c < 1:
        raise DomainError("number of components must be >= 1")
    if n < c:
        raise DomainError(f"cannot fit {c} components to {n} points")
    floor = variance_floor(data, var_floor)

    if c == 1:
        model = _single_gaussian(data, covariance_kind, floor)
        history = [float(np.mean(model.log_likelihood(data)))]
        return (model, history) if return_history else model

    km = KMeans(n_clusters=c, init="k-means++", n_init=1, max_iter=20, random_state=seed).fit(data)
    resp = np.zeros((n, c))
    resp[np.arange(n), km.labels_] = 1.0
    weights, means, covs, nk = m_step(data, resp, covariance_kind, floor)
    model = _safe_model(weights, means, covs, covariance_kind)

    history = []
    reseeded = False
    for it in range(max_iter):
        wl = model.weighted_log_densities(data)
        lse = logsumexp(wl, axis=1)
        ll = float(np.mean(lse))
        if not np.isfinite(ll):
            raise NumericError(f"log-likelihood became non-finite at iteration {it}")
        history.append(ll)
        if len(history) > 1 and history[-1] - history[-2] < tol:
            break
        resp = np.exp(wl - lse[:, None])
        weights, means, covs, nk = m_step(data, resp, covariance_kind, floor)
        collapsed = np.flatnonzero(weights < COLLAPSE_WEIGHT)
        if collapsed.size:
            if reseeded:
                raise NumericError(f"mixture component collapsed again at iteration {it}")
            reseeded = True
            logger.warning("re-seeding %d collapsed component(s) at iteration %d", collapsed.size, it)
            worst = np.argsort(lse)[: collapsed.size]
            global_cov = _single_gaussian(data, covariance_kind, floor).covariances[0]
            for j, w in zip(collapsed, worst):
                means[j] = data[w]
                covs[j] = global_cov
                weights[j] = 1.0 / n
            weights /= weights.sum()
        model = _safe_model(weights, means, covs, covariance_kind)
    return (model, history) if return_history else model


class GaussianMixtureEM(DensityMixin, BaseEstimator):
    """Estimator wrapper around :func:`fit_gmm_em`; the fitted mixture is ``model_``."""

    def __init__(self, n_components=64, covariance_kind=DIAGONAL, max_iter=200, tol=1e-6,
                 var_floor=1e-4, seed=0):
        self.n_components = n_components
        self.covariance_kind = covariance_kind
        self.max_iter = max_iter
        self.tol = tol
        self.var_floor = var_floor
        self.seed = seed

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.model_, self.history_ = fit_gmm_em(
            X, self.n_components, max_iter=self.max_iter, tol=self.tol, var_floor=self.var_floor,
            seed=self.seed, covariance_kind=self.covariance_kind, return_history=True)
        self.n_features_in_ = X.shape[1]
        return self

    def score_samples(self, X):
        check_is_fitted(self, "model_")
        return self.model_.log_likelihood(check_array(X, dtype=np.float64))

    def score(self, X, y=None):
        return float(np.mean(self.score_samples(X)))


# ---------------------------------------------------------------------------
# MAP adaptation


def map_statistics(ubm, data):
    """Zeroth- and first-order posterior statistics ``(n_i, F_i)`` of ``data`` under ``ubm``."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    resp = ubm.responsibilities(data)
    return resp.sum(axis=0), resp.T @ data


def adapt_means(ubm, n, F, r):
    """Mean-only MAP update ``alpha_i E_i[x] + (1 - alpha_i) mu_i`` with ``alpha_i = n_i / (n_i + r)``.

    Evaluated as ``(F_i + r mu_i) / (n_i + r)``, which stays accurate when
    ``n_i`` is close to zero.  Leading axes of ``n`` and ``F`` broadcast.
    """
    n = np.maximum(np.asarray(n, dtype=float), 0.0)
    F = np.asarray(F, dtype=float)
    if np.isinf(r):
        return np.broadcast_to(ubm.means, F.shape).copy()
    denom = (n + r)[..., None]
    num = F + r * ubm.means
    return np.divide(num, denom, out=np.broadcast_to(ubm.means, num.shape).copy(), where=denom > 0)


def map_adapt(ubm, data, r=16.0):
    """Reynolds-style mean-only MAP adaptation; weights and covariances are copied from ``ubm``."""
    if r < 0:
        raise DomainError("relevance factor must be non-negative")
    data = _check_data(data)
    if data.shape[0] < 1:
        raise DomainError("MAP adaptation needs at least one vector")
    if data.shape[1] != ubm.dim:
        raise DimensionError(f"UBM dimension is {ubm.dim}, data dimension is {data.shape[1]}")
    n, F = map_statistics(ubm, data)
    return ubm.with_means(adapt_means(ubm, n, F, r))
