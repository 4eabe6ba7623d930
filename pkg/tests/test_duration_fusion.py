import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import multivariate_normal

from ivlid.data_io import ScorePairs, TrialScoreMatrix
from ivlid.duration_fusion import (DurationLRCalibrator, ScoreDurationDensityModel, adapt_language_densities,
                                   fit_density_model, fit_universal_densities, lr_per_language, lr_universal,
                                   separation, transform_scores)
from ivlid.errors import DomainError, NumericError
from ivlid.gmm import FULL, GmmModel, map_adapt


def _gauss(mean, cov):
    return GmmModel([1.0], [mean], [cov], FULL)


def _pairs(rng, n, shift, languages):
    s = rng.normal(shift, 1.0, n)
    d = rng.uniform(1.0, 4.0, n)
    s = s + 0.5 * d
    langs = [languages[i % len(languages)] for i in range(n)]
    return ScorePairs(s, d, langs)


@pytest.fixture
def pairs(rng):
    langs = ["a", "b", "c"]
    return _pairs(rng, 600, 2.0, langs), _pairs(rng, 1200, -2.0, langs), langs


def test_identical_densities_give_zero(rng):
    g = _gauss([0.0, 1.0], np.eye(2))
    model = ScoreDurationDensityModel(g, g)
    s, d = rng.standard_normal(50), rng.standard_normal(50)
    np.testing.assert_array_equal(lr_universal(model, s, d), 0.0)
    assert lr_per_language(model, "x", 1.0, 2.0) == 0.0


def test_closed_form_gaussian_difference(rng):
    tar = _gauss([2.0, 1.0], [[1.0, 0.3], [0.3, 0.5]])
    non = _gauss([-1.0, 1.5], [[2.0, -0.2], [-0.2, 0.7]])
    model = ScoreDurationDensityModel(tar, non)
    s, d = rng.standard_normal(20), rng.standard_normal(20)
    pts = np.column_stack([s, d])
    expected = (multivariate_normal([2.0, 1.0], [[1.0, 0.3], [0.3, 0.5]]).logpdf(pts)
                - multivariate_normal([-1.0, 1.5], [[2.0, -0.2], [-0.2, 0.7]]).logpdf(pts))
    np.testing.assert_allclose(lr_universal(model, s, d), expected, atol=1e-12)
    ratio = (multivariate_normal([2.0, 1.0], [[1.0, 0.3], [0.3, 0.5]]).pdf(pts)
             / multivariate_normal([-1.0, 1.5], [[2.0, -0.2], [-0.2, 0.7]]).pdf(pts))
    np.testing.assert_allclose(np.exp(lr_universal(model, s, d)), ratio, rtol=1e-10)
    assert lr_universal(model, 2.0, 1.0) > 0


def test_swapping_densities_negates(rng):
    tar, non = _gauss([3.0, 0.0], np.eye(2)), _gauss([-3.0, 0.0], np.eye(2) * 0.1)
    s = np.concatenate([rng.standard_normal(20), [1e4, -1e4]])
    d = np.zeros_like(s)
    a = lr_universal(ScoreDurationDensityModel(tar, non), s, d)
    b = lr_universal(ScoreDurationDensityModel(non, tar), s, d)
    np.testing.assert_array_equal(a, -b)
    assert np.all(np.isfinite(a))


def test_nonfinite_input_rejected():
    g = _gauss([0.0, 0.0], np.eye(2))
    with pytest.raises(DomainError):
        lr_universal(ScoreDurationDensityModel(g, g), np.nan, 0.0)


def test_universal_fit_requirements(rng):
    pts = ScorePairs(rng.standard_normal(10), rng.standard_normal(10), ["a"] * 10)
    with pytest.raises(DomainError):
        fit_universal_densities(pts, pts)
    same = ScorePairs(np.ones(60), np.ones(60), ["a"] * 60)
    with pytest.raises(NumericError):
        fit_universal_densities(same, same)


def test_c_max_one_is_closed_form(pairs):
    tar, non, _ = pairs
    t, n = fit_universal_densities(tar, non, c_max=1)
    np.testing.assert_allclose(t.means[0], tar.points.mean(0))
    np.testing.assert_allclose(t.covariances[0], np.cov(tar.points.T, bias=True), rtol=1e-10)


def test_single_gaussian_targets_select_one():
    hits = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        pts = rng.multivariate_normal([1.0, 2.0], [[1.0, 0.4], [0.4, 0.5]], size=400)
        sp = ScorePairs(pts[:, 0], pts[:, 1], ["a"] * 400)
        hits += fit_universal_densities(sp, sp, c_max=6, seed=seed)[0].n_components == 1
    assert hits >= 18


def test_adaptation_blend_and_counts(pairs):
    tar, non, langs = pairs
    t, n = fit_universal_densities(tar, non, c_max=3)
    per_t, per_n, fallback = adapt_language_densities(t, n, tar, non, langs, relevance=16.0)
    assert sorted(per_t) == langs and sorted(per_n) == langs and fallback == []
    for lang in langs:
        oracle = map_adapt(t, tar.for_language(lang), 16.0)
        np.testing.assert_allclose(per_t[lang].means, oracle.means, rtol=1e-12)
        assert per_t[lang].n_components == t.n_components


def test_shifted_language_moves_target_mean(rng):
    langs = ["a", "b"]
    tar = _pairs(rng, 400, 0.0, langs)
    shifted = tar.scores + np.where(np.asarray(tar.languages) == "a", 3.0, 0.0)
    tar = ScorePairs(shifted, tar.log_durations, tar.languages)
    non = _pairs(rng, 400, -4.0, langs)
    model = fit_density_model(tar, non, langs, c_max=1)
    mean_a = model.per_language_target["a"].means[0, 0]
    mean_b = model.per_language_target["b"].means[0, 0]
    assert mean_a > model.universal_target.means[0, 0] > mean_b


def test_sparse_language_falls_back(pairs, rng):
    tar, non, langs = pairs
    extra = ScorePairs(np.append(tar.scores, [1.0, 2.0]), np.append(tar.log_durations, [1.0, 1.0]),
                       tar.languages + ["rare", "rare"])
    model = fit_density_model(extra, non, langs + ["rare"], c_max=2, min_pairs=10)
    assert model.fallback_languages == ["rare"]
    s, d = np.array([0.5, 1.5]), np.array([1.0, 2.0])
    np.testing.assert_array_equal(lr_per_language(model, "rare", s, d), lr_universal(model, s, d))


def test_infinite_relevance_collapses_to_universal(pairs, rng):
    tar, non, langs = pairs
    model = fit_density_model(tar, non, langs, c_max=2, relevance=np.inf)
    raw = TrialScoreMatrix([f"x{i}" for i in range(30)], rng.uniform(2, 50, 30), langs,
                           rng.normal(0, 3, (30, 3)), kind="gmm")
    np.testing.assert_allclose(transform_scores(model, raw, per_language=True).scores,
                               transform_scores(model, raw, per_language=False).scores, atol=1e-6)


def test_transform_checks_kind_and_languages(pairs, rng):
    tar, non, langs = pairs
    model = fit_density_model(tar, non, langs, c_max=1)
    raw = TrialScoreMatrix(["x"], [5.0], langs, rng.standard_normal((1, 3)), kind="dnn")
    with pytest.raises(DomainError):
        transform_scores(model, raw)
    raw = TrialScoreMatrix(["x"], [5.0], ["a", "zz"], rng.standard_normal((1, 2)), kind="gmm")
    with pytest.raises(DomainError):
        transform_scores(model, raw)


def test_transform_uses_segment_log_duration(pairs):
    tar, non, langs = pairs
    model = fit_density_model(tar, non, langs, c_max=1)
    raw = TrialScoreMatrix(["x", "y"], [np.e, np.e ** 2], langs, np.array([[1.0, 0.0, -1.0], [1.0, 0.0, -1.0]]))
    out = transform_scores(model, raw)
    assert out.kind == "lr"
    assert out.scores[0, 1] == pytest.approx(lr_per_language(model, "b", 0.0, 1.0))
    assert out.scores[1, 1] == pytest.approx(lr_per_language(model, "b", 0.0, 2.0))


def test_separation_increases_over_raw(pairs):
    tar, non, langs = pairs
    labels = langs * 20
    rng = np.random.default_rng(0)
    n = len(labels)
    truth = np.array([langs.index(l) for l in labels])
    raw_scores = rng.normal(-2.0, 1.0, (n, 3))
    raw_scores[np.arange(n), truth] = rng.normal(2.0, 1.0, n)
    raw = TrialScoreMatrix([f"s{i}" for i in range(n)], rng.uniform(3, 50, n), langs, raw_scores)
    cal = DurationLRCalibrator(c_max=2).fit(raw, labels)
    out = cal.transform(raw)
    assert separation(out, labels) > 0
    assert cal.get_params()["c_max"] == 2


def test_model_round_trip(pairs, rng):
    tar, non, langs = pairs
    model = fit_density_model(tar, non, langs, c_max=2)
    back = ScoreDurationDensityModel.from_dict(model.to_dict())
    raw = TrialScoreMatrix(["x"], [5.0], langs, rng.standard_normal((1, 3)))
    np.testing.assert_array_equal(transform_scores(back, raw).scores, transform_scores(model, raw).scores)


@settings(max_examples=40, deadline=None)
@given(st.floats(-50, 50), st.floats(-5, 5))
def test_equal_models_zero_everywhere(s, d):
    g = GmmModel([0.4, 0.6], [[0.0, 1.0], [2.0, 2.0]], [np.eye(2), np.eye(2) * 2], FULL)
    assert lr_universal(ScoreDurationDensityModel(g, g), s, d) == 0.0
