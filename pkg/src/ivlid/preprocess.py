"""Centering/whitening, unit-sphere projection and LDA for i-vectors.

The pipeline order is fixed: whiten (fit on dev) -> length-normalize ->
LDA (fit on labeled train).  :class:`IVectorPreprocessor` bundles the three
steps so every corpus goes through the same chain.
"""

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import DimensionError, DomainError, NumericError


def _as_matrix(X):
    return check_array(X, dtype=np.float64, ensure_min_samples=1, ensure_all_finite=True)


def _check_dim(X, expected, what):
    if X.shape[1] != expected:
        raise DimensionError(f"{what} expects dimension {expected}, got {X.shape[1]}")


class CenterWhitener(TransformerMixin, BaseEstimator):
    """Subtract the fitting-set mean and multiply by the inverse square root of its covariance.

    Parameters
    ----------
    eps : float
        Floor applied to covariance eigenvalues before inversion.

    Attributes
    ----------
    mean_ : ndarray of shape (D,)
    whitener_ : ndarray of shape (D, D)
        Symmetric ``V diag(max(lambda, eps))^(-1/2) V^T``.
    """

    def __init__(self, eps=1e-8):
        self.eps = eps

    def fit(self, X, y=None):
        X = _as_matrix(X)
        if self.eps <= 0:
            raise DomainError("eps must be positive")
        n, d = X.shape
        if n < d + 1:
            raise DomainError(f"whitening {d}-dim data needs at least {d + 1} records, got {n}")
        self.mean_ = X.mean(axis=0)
        centred = X - self.mean_
        cov = centred.T @ centred / n
        if not np.all(np.isfinite(cov)):
            raise NumericError("covariance has non-finite entries")
        evals, evecs = linalg.eigh(cov)
        evals = np.maximum(evals, self.eps)
        self.whitener_ = (evecs / np.sqrt(evals)) @ evecs.T
        self.whitener_ = 0.5 * (self.whitener_ + self.whitener_.T)
        self.n_features_in_ = d
        return self

    def transform(self, X):
        check_is_fitted(self, "whitener_")
        X = _as_matrix(X)
        _check_dim(X, self.n_features_in_, "whitening transform")
        return (X - self.mean_) @ self.whitener_.T

    def to_dict(self):
        return {"eps": self.eps, "mean": self.mean_, "whitener": self.whitener_}

    @classmethod
    def from_dict(cls, d):
        obj = cls(eps=d["eps"])
        obj.mean_ = np.asarray(d["mean"], dtype=float)
        obj.whitener_ = np.asarray(d["whitener"], dtype=float)
        obj.n_features_in_ = obj.mean_.shape[0]
        return obj


def length_normalize(X):
    """Project rows (or a single vector) onto the unit sphere."""
    X = np.asarray(X, dtype=float)
    norms = np.linalg.norm(X, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise DomainError("cannot length-normalize a zero vector")
    return X / norms


class LengthNormalizer(TransformerMixin, BaseEstimator):
    """Stateless unit-sphere projection."""

    def fit(self, X, y=None):
        self.n_features_in_ = _as_matrix(X).shape[1]
        return self

    def transform(self, X):
        return length_normalize(_as_matrix(X))


class LDAProjector(TransformerMixin, BaseEstimator):
    """Linear discriminant projection onto the top ``n_components`` directions.

    Rows of ``projection_`` solve ``S_b v = lambda (S_w + ridge I) v`` with
    eigenvalues in descending order; each row's first nonzero entry is
    positive so fitted models are reproducible.

    Parameters
    ----------
    n_components : int
    ridge : float or None
        Added to the within-class scatter diagonal.  ``None`` means
        ``1e-6 * trace(S_w) / D``; pass 0 to disable.
    """

    def __init__(self, n_components=49, ridge=None):
        self.n_components = n_components
        self.ridge = ridge

    def fit(self, X, y):
        X = _as_matrix(X)
        y = np.asarray(y, dtype=object)
        if len(y) != X.shape[0]:
            raise DimensionError("X and y differ in length")
        classes = sorted(set(y.tolist()))
        if len(classes) < 2:
            raise DomainError("LDA needs at least 2 classes")
        k = int(self.n_components)
        if k < 1 or k > len(classes) - 1:
            raise DomainError(f"n_components must lie in [1, {len(classes) - 1}], got {k}")
        d = X.shape[1]
        if k > d:
            raise DomainError(f"n_components {k} exceeds input dimension {d}")
        mu = X.mean(axis=0)
        s_within = np.zeros((d, d))
        s_between = np.zeros((d, d))
        for c in classes:
            Xc = X[y == c]
            if len(Xc) < 2:
                raise DomainError(f"class {c!r} has fewer than 2 records")
            mc = Xc.mean(axis=0)
            diff = Xc - mc
            s_within += diff.T @ diff
            delta = (mc - mu)[:, None]
            s_between += len(Xc) * (delta @ delta.T)
        s_within /= X.shape[0]
        s_between /= X.shape[0]
        ridge = 1e-6 * np.trace(s_within) / d if self.ridge is None else float(self.ridge)
        s_within_r = s_within + ridge * np.eye(d)
        try:
            evals, evecs = linalg.eigh(s_between, s_within_r)
        except linalg.LinAlgError as exc:
            raise NumericError(f"within-class scatter is singular: {exc}") from None
        order = np.argsort(evals)[::-1][:k]
        proj = evecs[:, order].T
        for row in proj:
            nz = np.flatnonzero(np.abs(row) > 1e-15)
            if nz.size and row[nz[0]] < 0:
                row *= -1.0
        self.projection_ = proj
        self.eigenvalues_ = evals[order]
        self.classes_ = classes
        self.n_features_in_ = d
        return self

    def transform(self, X):
        check_is_fitted(self, "projection_")
        X = _as_matrix(X)
        _check_dim(X, self.n_features_in_, "LDA projection")
        return X @ self.projection_.T

    def to_dict(self):
        return {"n_components": self.n_components, "ridge": self.ridge,
                "projection": self.projection_, "eigenvalues": self.eigenvalues_,
                "classes": list(self.classes_)}

    @classmethod
    def from_dict(cls, d):
        obj = cls(n_components=d["n_components"], ridge=d["ridge"])
        obj.projection_ = np.atleast_2d(np.asarray(d["projection"], dtype=float))
        obj.eigenvalues_ = np.asarray(d["eigenvalues"], dtype=float)
        obj.classes_ = list(d["classes"])
        obj.n_features_in_ = obj.projection_.shape[1]
        return obj


class IVectorPreprocessor(TransformerMixin, BaseEstimator):
    """Whiten on dev, length-normalize, then (optionally) LDA fit on labeled train.

    ``fit(X_train, y_train, X_dev=...)`` fits the whitener on ``X_dev``
    (falling back to ``X_train``) and LDA on the whitened, normalized train
    vectors.  ``n_components=None`` skips LDA, which is what the cosine
    baseline uses.
    """

    def __init__(self, n_components=49, eps=1e-8, ridge=None):
        self.n_components = n_components
        self.eps = eps
        self.ridge = ridge

    def fit(self, X, y=None, X_dev=None):
        X = _as_matrix(X)
        self.whitener_ = CenterWhitener(eps=self.eps).fit(X if X_dev is None else X_dev)
        Z = length_normalize(self.whitener_.transform(X))
        self.lda_ = None
        if self.n_components is not None:
            if y is None:
                raise DomainError("LDA needs labels")
            self.lda_ = LDAProjector(self.n_components, self.ridge).fit(Z, y)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X, lda=True):
        check_is_fitted(self, "whitener_")
        Z = length_normalize(self.whitener_.transform(X))
        if lda and self.lda_ is not None:
            Z = self.lda_.transform(Z)
        return Z

    def to_dict(self):
        return {"n_components": self.n_components, "eps": self.eps, "ridge": self.ridge,
                "whitener": self.whitener_.to_dict(),
                "lda": None if self.lda_ is None else self.lda_.to_dict()}

    @classmethod
    def from_dict(cls, d):
        obj = cls(n_components=d["n_components"], eps=d["eps"], ridge=d["ridge"])
        obj.whitener_ = CenterWhitener.from_dict(d["whitener"])
        obj.lda_ = None if d["lda"] is None else LDAProjector.from_dict(d["lda"])
        obj.n_features_in_ = obj.whitener_.n_features_in_
        return obj


# Function API over corpora -------------------------------------------------


def fit_center_whiten(dev, eps=1e-8):
    """Fit a :class:`CenterWhitener` on the vectors of corpus ``dev``."""
    return CenterWhitener(eps=eps).fit(dev.vectors)


def apply_center_whiten(t, v):
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != t.n_features_in_:
        raise DimensionError(f"whitening transform expects dimension {t.n_features_in_}, got {v.shape[-1]}")
    return (v - t.mean_) @ t.whitener_.T


def fit_lda(train, k, ridge=None):
    labelled = [i for i, lab in enumerate(train.labels) if lab is not None]
    if len(labelled) != len(train):
        raise DomainError("LDA training corpus must be fully labeled")
    return LDAProjector(n_components=k, ridge=ridge).fit(train.vectors, train.labels)


def apply_lda(t, v):
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != t.n_features_in_:
        raise DimensionError(f"LDA projection expects dimension {t.n_features_in_}, got {v.shape[-1]}")
    return v @ t.projection_.T


def preprocess_corpus(pre, corpus, lda=True):
    return corpus.with_vectors(pre.transform(corpus.vectors, lda=lda))
