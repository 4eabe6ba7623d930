import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ivlid.data_io import OUT_OF_SET, TrialScoreMatrix
from ivlid.errors import DimensionError, DomainError
from ivlid.fusion_eval import (CostParams, DecisionPolicy, FusionModel, LinearFusion, compute_cost, decide,
                               det_points, equal_error_rate, train_fusion, tune_threshold,
                               with_pseudo_out_of_set)


def _matrix(scores, langs=("a", "b"), durations=None, kind="gmm"):
    scores = np.asarray(scores, dtype=float)
    ids = [f"s{i}" for i in range(len(scores))]
    return TrialScoreMatrix(ids, durations if durations is not None else np.full(len(scores), 10.0),
                            list(langs), scores, kind)


# ---------------------------------------------------------------------------
# cost


def test_hand_case_cost():
    truth = {"a1": "A", "a2": "A", "b1": "B", "b2": "B", "o1": OUT_OF_SET}
    decisions = {"a1": "A", "a2": "B", "b1": "B", "b2": "B", "o1": "A"}
    assert compute_cost(decisions, truth, CostParams(n=2, p_oos=0.23)) == pytest.approx(42.25, abs=1e-12)


def test_cost_extremes():
    truth = {"a": "A", "b": "B", "o": OUT_OF_SET}
    assert compute_cost(dict(truth), truth, CostParams(n=2)) == 0.0
    wrong = {"a": "B", "b": OUT_OF_SET, "o": "A"}
    assert compute_cost(wrong, truth, CostParams(n=2)) == pytest.approx(100.0)


def _tally(decisions, truth, n, p_oos):
    classes = sorted({v for v in truth.values() if v != OUT_OF_SET})
    total = 0.0
    for k in classes:
        ids = [i for i, t in truth.items() if t == k]
        total += sum(decisions[i] != k for i in ids) / len(ids)
    oos = [i for i, t in truth.items() if t == OUT_OF_SET]
    oos_err = sum(decisions[i] != OUT_OF_SET for i in oos) / len(oos) if oos else 0.0
    return 100 * ((1 - p_oos) / n * total + p_oos * oos_err)


def test_cost_matches_tally_on_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(2, 6))
        labels = [f"L{i}" for i in range(n)] + [OUT_OF_SET]
        m = int(rng.integers(n + 1, 40))
        truth_labels = labels[:n] + [labels[i] for i in rng.integers(0, n + 1, m - n)]
        truth = {f"x{i}": lab for i, lab in enumerate(truth_labels)}
        decisions = {k: labels[rng.integers(0, n + 1)] for k in truth}
        p_oos = float(rng.uniform(0, 1))
        got = compute_cost(decisions, truth, CostParams(n=n, p_oos=p_oos))
        assert got == pytest.approx(_tally(decisions, truth, n, p_oos), abs=1e-12)


def test_cost_errors_and_warnings(caplog):
    with pytest.raises(DomainError):
        compute_cost({"x": "A"}, {}, CostParams(n=1))
    with pytest.raises(DomainError):
        compute_cost({"x": "A", "y": "B"}, {"x": "A", "y": "B"}, CostParams(n=1))
    with caplog.at_level("WARNING"):
        compute_cost({"x": "A"}, {"x": "A"}, CostParams(n=3))
    assert "no trials" in caplog.text or "no out-of-set" in caplog.text


# ---------------------------------------------------------------------------
# decisions and threshold


def test_decide_threshold_and_ties():
    m = _matrix([[0.5, 0.5], [0.1, 0.2], [2.0, 1.0]])
    d = decide(m, DecisionPolicy(0.3))
    assert d == {"s0": "a", "s1": OUT_OF_SET, "s2": "a"}
    # strict inequality: max equal to threshold is rejected
    assert decide(m, DecisionPolicy(2.0))["s2"] == OUT_OF_SET


def test_decide_empty_rejected():
    with pytest.raises(DomainError):
        decide(_matrix(np.zeros((0, 2))), DecisionPolicy(0.0))


def test_tune_threshold_separable():
    m = _matrix([[3.0, 0.0], [0.0, 2.5], [0.2, 0.1], [0.0, 0.4]])
    labels = ["a", "b", OUT_OF_SET, OUT_OF_SET]
    policy = tune_threshold(m, labels, CostParams(n=2), grid_size=64)
    d = decide(m, policy)
    assert compute_cost(d, dict(zip(m.ids, labels)), CostParams(n=2)) == 0.0
    # smallest threshold among the optimal ones is the largest oos max (0.4)
    assert policy.threshold == pytest.approx(0.4)


def test_tuned_threshold_is_grid_optimal(rng):
    m = _matrix(rng.standard_normal((60, 3)), langs=("a", "b", "c"))
    labels = [["a", "b", "c", OUT_OF_SET][i % 4] for i in range(60)]
    params = CostParams(n=3)
    policy = tune_threshold(m, labels, params, grid_size=512)
    truth = dict(zip(m.ids, labels))
    best = compute_cost(decide(m, policy), truth, params)
    for t in np.unique(m.scores.max(axis=1)):
        assert compute_cost(decide(m, DecisionPolicy(float(t))), truth, params) >= best - 1e-12


def test_pseudo_out_of_set_rows():
    m = _matrix([[2.0, 1.0], [0.0, 3.0]])
    out, labels = with_pseudo_out_of_set(m, ["a", "b"])
    assert labels == ["a", "b", OUT_OF_SET, OUT_OF_SET]
    np.testing.assert_array_equal(out.scores[2], [0.0, 1.0])
    np.testing.assert_array_equal(out.scores[3], [0.0, -1.0])
    assert out.ids[2] == "s0#oos"


# ---------------------------------------------------------------------------
# fusion


def _labels_and_scores(rng, n=200, langs=("a", "b", "c")):
    labels = [langs[i % len(langs)] for i in range(n)]
    truth = np.array([langs.index(l) for l in labels])
    s = rng.normal(-1, 1, (n, len(langs)))
    s[np.arange(n), truth] += 3.0
    return labels, s


def test_fusion_learns_positive_weights(rng):
    labels, s = _labels_and_scores(rng)
    a = _matrix(s, langs=("a", "b", "c"), durations=rng.uniform(3, 30, len(s)))
    # an independent, weaker view of the same trials
    truth = np.array([("a", "b", "c").index(l) for l in labels])
    weak = rng.normal(-1, 1, s.shape)
    weak[np.arange(len(s)), truth] += 1.5
    b = a.replace(scores=weak)
    model = train_fusion([a, b], labels)
    assert model.weights[0] > model.weights[1] > 0
    fused = model.apply([a, b])
    expected = model.weights[0] * a.scores + model.weights[1] * b.scores \
        + model.quality_weight * np.log(a.durations)[:, None] + model.offset
    np.testing.assert_allclose(fused.scores, expected)
    assert fused.kind == "fused"
    back = FusionModel.from_dict(model.to_dict())
    np.testing.assert_array_equal(back.apply([a, b]).scores, fused.scores)


def test_identical_subsystems_any_split(rng):
    labels, s = _labels_and_scores(rng)
    a = _matrix(s, langs=("a", "b", "c"))
    model = train_fusion([a, a], labels, use_duration=False)
    total = model.weights.sum()
    other = FusionModel([total * 0.3, total * 0.7], 0.0, model.offset)
    np.testing.assert_allclose(other.apply([a, a]).scores, model.apply([a, a]).scores)
    single = train_fusion([a], labels, use_duration=False)
    np.testing.assert_allclose(single.weights[0], total, rtol=1e-4)


def test_fusion_alignment_checked(rng):
    labels, s = _labels_and_scores(rng, n=12)
    a = _matrix(s, langs=("a", "b", "c"))
    b = _matrix(s, langs=("a", "c", "b"))
    with pytest.raises(DimensionError):
        train_fusion([a, b], labels)
    est = LinearFusion(use_duration=False).fit([a], labels)
    assert est.transform([a]).scores.shape == s.shape


# ---------------------------------------------------------------------------
# DET


def test_det_perfect_separation():
    pts = det_points([1.0, 2.0, -1.0, -2.0], [True, True, False, False])
    assert equal_error_rate(pts) == 0.0
    assert pts[-1][:2] == (0.0, 1.0)
    assert pts[0][:2] == (1.0, 0.0)


def test_det_identical_distributions():
    pts = det_points([0.0, 0.0, 0.0, 0.0], [True, False, True, False])
    assert equal_error_rate(pts) == pytest.approx(0.5)


def test_det_requires_both_classes():
    with pytest.raises(DomainError):
        det_points([1.0, 2.0], [True, True])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-10, 10), st.booleans()), min_size=2, max_size=60).filter(
    lambda xs: any(t for _, t in xs) and not all(t for _, t in xs)))
def test_det_monotone(trials):
    scores = [s for s, _ in trials]
    is_tar = [t for _, t in trials]
    pts = det_points(scores, is_tar)
    fa = np.array([p[0] for p in pts])
    miss = np.array([p[1] for p in pts])
    thr = np.array([p[2] for p in pts])
    assert np.all(np.diff(thr) > 0)
    assert np.all(np.diff(fa) <= 0) and np.all(np.diff(miss) >= 0)
    assert 0.0 <= equal_error_rate(pts) <= 1.0
