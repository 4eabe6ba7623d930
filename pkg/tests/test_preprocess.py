import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ivlid.data_io import Corpus
from ivlid.errors import DimensionError, DomainError
from ivlid.preprocess import (CenterWhitener, IVectorPreprocessor, LDAProjector, apply_center_whiten,
                              apply_lda, fit_center_whiten, fit_lda, length_normalize, preprocess_corpus)

from conftest import make_corpus


def _unlabeled(X):
    return Corpus([f"d{i}" for i in range(len(X))], np.ones(len(X)), [None] * len(X), X)


def test_whitened_fitting_set_is_identity(rng):
    A = rng.standard_normal((6, 6))
    X = rng.standard_normal((500, 6)) @ A + 3.0
    t = fit_center_whiten(_unlabeled(X))
    Z = apply_center_whiten(t, X)
    cov = np.cov(Z.T, bias=True)
    assert np.linalg.norm(cov - np.eye(6)) <= 1e-6
    assert np.all(np.abs(Z.mean(axis=0)) <= 1e-9)
    np.testing.assert_allclose(t.whitener_, t.whitener_.T)
    assert np.all(np.linalg.eigvalsh(t.whitener_) > 0)


def test_whitening_identity_case(rng):
    X = rng.standard_normal((4000, 3))
    X = (X - X.mean(0)) @ np.linalg.inv(np.linalg.cholesky(np.cov(X.T, bias=True))).T
    t = CenterWhitener().fit(X)
    np.testing.assert_allclose(t.whitener_, np.eye(3), atol=1e-6)
    np.testing.assert_allclose(t.mean_, 0.0, atol=1e-6)


def test_whitening_sample_statistics(rng):
    mu = np.array([1.0, -2.0, 0.5])
    L = np.array([[2.0, 0, 0], [0.5, 1.0, 0], [0.3, -0.2, 0.4]])
    fit = rng.standard_normal((10000, 3)) @ L.T + mu
    fresh = rng.standard_normal((10000, 3)) @ L.T + mu
    t = CenterWhitener().fit(fit)
    assert np.linalg.norm(np.cov(t.transform(fresh).T) - np.eye(3)) < 0.05


def test_apply_whiten_oracle(rng):
    X = rng.standard_normal((50, 4)) @ rng.standard_normal((4, 4))
    t = CenterWhitener().fit(X)
    v = rng.standard_normal(4)
    np.testing.assert_allclose(apply_center_whiten(t, v), t.whitener_ @ (v - t.mean_), atol=1e-12)
    np.testing.assert_allclose(apply_center_whiten(t, t.mean_), 0.0, atol=1e-12)
    with pytest.raises(DimensionError):
        apply_center_whiten(t, np.ones(3))


def test_whitening_needs_enough_records(rng):
    with pytest.raises(DomainError):
        CenterWhitener().fit(rng.standard_normal((3, 5)))


def test_length_normalize_examples():
    np.testing.assert_allclose(length_normalize(np.array([3.0, 4.0])), [0.6, 0.8])
    u = np.array([0.0, 1.0, 0.0])
    np.testing.assert_array_equal(length_normalize(u), u)
    with pytest.raises(DomainError):
        length_normalize(np.zeros(3))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, 7, elements=st.floats(-1e6, 1e6, allow_nan=False)).filter(
    lambda v: np.linalg.norm(v) > 1e-6))
def test_length_normalize_unit_and_idempotent(v):
    u = length_normalize(v)
    assert abs(np.linalg.norm(u) - 1.0) <= 1e-12
    np.testing.assert_allclose(length_normalize(u), u, atol=1e-12)
    assert np.dot(u, v) > 0


def test_lda_two_classes_separated(rng):
    a = rng.standard_normal((200, 2)) + [10.0, 0.0]
    b = rng.standard_normal((200, 2)) + [-10.0, 0.0]
    X = np.vstack([a, b])
    y = ["a"] * 200 + ["b"] * 200
    lda = LDAProjector(n_components=1).fit(X, y)
    pa, pb = lda.transform(a).ravel(), lda.transform(b).ravel()
    within_sd = np.sqrt(0.5 * (pa.var() + pb.var()))
    assert abs(pa.mean() - pb.mean()) > 5 * within_sd


def test_lda_shapes_and_errors():
    corpus = make_corpus(n_per_lang=10, langs=tuple("abcde"), dim=8)
    t = fit_lda(corpus, 4)
    assert t.projection_.shape == (4, 8)
    assert np.all(np.isfinite(t.eigenvalues_)) and np.all(t.eigenvalues_ >= -1e-12)
    assert np.all(np.diff(t.eigenvalues_) <= 0)
    assert np.linalg.matrix_rank(t.projection_) == 4
    with pytest.raises(DomainError):
        fit_lda(corpus, 5)
    with pytest.raises(DimensionError):
        apply_lda(t, np.ones(7))


def test_lda_sign_convention_and_determinism():
    corpus = make_corpus(n_per_lang=10, langs=tuple("abcd"), dim=6)
    p1 = fit_lda(corpus, 3).projection_
    p2 = fit_lda(corpus, 3).projection_
    np.testing.assert_array_equal(p1, p2)
    for row in p1:
        assert row[np.flatnonzero(np.abs(row) > 1e-15)[0]] > 0


def test_apply_lda_oracles(rng):
    t = LDAProjector(n_components=3)
    t.projection_ = np.eye(3)
    t.n_features_in_ = 3
    v = rng.standard_normal(3)
    np.testing.assert_array_equal(apply_lda(t, v), v)
    np.testing.assert_array_equal(apply_lda(t, np.zeros(3)), np.zeros(3))
    t.projection_ = rng.standard_normal((2, 3))
    np.testing.assert_allclose(apply_lda(t, v), t.projection_ @ v, atol=1e-12)


def _fisher(P, Sw, Sb):
    return np.trace(np.linalg.solve(P @ Sw @ P.T, P @ Sb @ P.T))


def test_lda_beats_random_projections(rng):
    corpus = make_corpus(n_per_lang=30, langs=tuple("abcdef"), dim=10, spread=1.5)
    X, y = corpus.vectors, np.asarray(corpus.labels, dtype=object)
    mu = X.mean(0)
    Sw = sum((X[y == c] - X[y == c].mean(0)).T @ (X[y == c] - X[y == c].mean(0)) for c in set(y)) / len(X)
    Sb = sum((y == c).sum() * np.outer(X[y == c].mean(0) - mu, X[y == c].mean(0) - mu) for c in set(y)) / len(X)
    P = fit_lda(corpus, 3).projection_
    best = _fisher(P, Sw, Sb)
    for _ in range(25):
        assert _fisher(rng.standard_normal((3, 10)), Sw, Sb) <= best + 1e-9


def test_preprocessor_chain_and_round_trip():
    train = make_corpus(n_per_lang=15, langs=tuple("abcd"), dim=6, seed=3)
    dev = make_corpus(n_per_lang=15, langs=tuple("abcd"), dim=6, seed=4, prefix="d").unlabeled()
    pre = IVectorPreprocessor(n_components=3).fit(train.vectors, train.labels, X_dev=dev.vectors)
    Zn = preprocess_corpus(pre, train, lda=False)
    np.testing.assert_allclose(np.linalg.norm(Zn.vectors, axis=1), 1.0, atol=1e-12)
    Zl = preprocess_corpus(pre, train)
    assert Zl.dim == 3
    np.testing.assert_allclose(Zl.vectors, Zn.vectors @ pre.lda_.projection_.T)
    back = IVectorPreprocessor.from_dict(pre.to_dict())
    np.testing.assert_array_equal(back.transform(train.vectors), Zl.vectors)
