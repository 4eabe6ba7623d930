import numpy as np
import pytest

from ivlid.dnn import (DNNClassifier, DnnModel, TrainConfig, dnn_posteriors, init_dnn, loss_and_gradients,
                       posterior_log_odds, score_dnn, train_dnn)
from ivlid.errors import DimensionError, DivergenceError, DomainError

from conftest import make_corpus


def _numeric_gradient(model, X, y, l2, eps=1e-5):
    grads = []
    for param in model.weights + model.biases:
        g = np.zeros_like(param)
        for idx in np.ndindex(param.shape):
            old = param[idx]
            param[idx] = old + eps
            up = loss_and_gradients(model, X, y, l2)[0]
            param[idx] = old - eps
            down = loss_and_gradients(model, X, y, l2)[0]
            param[idx] = old
            g[idx] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


@pytest.mark.parametrize("l2", [0.0, 0.01])
def test_gradient_check_3_5_4(rng, l2):
    model = init_dnn([3, 5, 4], seed=3)
    for b in model.biases:
        b += 0.1 * rng.standard_normal(b.shape)
    X = rng.standard_normal((7, 3))
    y = rng.integers(0, 4, 7)
    _, gW, gb = loss_and_gradients(model, X, y, l2)
    analytic = np.concatenate([g.ravel() for g in gW + gb])
    numeric = np.concatenate([g.ravel() for g in _numeric_gradient(model, X, y, l2)])
    rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
    assert rel <= 1e-4


def test_init_ranges_and_variance():
    model = init_dnn([600, 600, 3], seed=0)
    W = model.weights[0]
    limit = np.sqrt(6.0 / 1200)
    assert np.all(np.abs(W) <= limit)
    assert abs(W.var() / (limit ** 2 / 3) - 1) < 0.2
    assert all(np.all(b == 0) for b in model.biases)
    np.testing.assert_array_equal(init_dnn([4, 3, 2], seed=5).weights[0], init_dnn([4, 3, 2], seed=5).weights[0])
    with pytest.raises(DomainError):
        init_dnn([4], seed=0)


def test_zero_weights_give_uniform_posteriors():
    model = init_dnn([3, 4, 5], seed=0)
    for W in model.weights:
        W[:] = 0
    np.testing.assert_allclose(dnn_posteriors(model, np.array([1.0, 2.0, 3.0])), 0.2)


def test_posteriors_sum_to_one(rng):
    model = init_dnn([3, 8, 4], seed=1)
    p = dnn_posteriors(model, rng.standard_normal((10, 3)))
    np.testing.assert_allclose(p.sum(axis=1), 1.0)
    with pytest.raises(DimensionError):
        dnn_posteriors(model, np.ones(2))


def test_zero_learning_rate_leaves_weights():
    c = make_corpus(n_per_lang=10, langs=("a", "b"), dim=3)
    init = init_dnn([3, 4, 2], seed=0, languages=["a", "b"])
    out = train_dnn(init, c.vectors, c.labels, TrainConfig(learning_rate=0.0, epochs=3))
    for W0, W1 in zip(init.weights, out.weights):
        np.testing.assert_array_equal(W0, W1)


def test_training_reduces_loss_and_beats_chance():
    c = make_corpus(n_per_lang=40, langs=tuple("abcde"), dim=5, spread=2.0)
    init = init_dnn([5, 32, 5], seed=0, languages=c.languages)
    net, hist = train_dnn(init, c.vectors, c.labels, TrainConfig(epochs=40, batch_size=32, seed=1),
                          return_history=True)
    assert min(hist["train_loss"]) < hist["train_loss"][0]
    pred = np.argmax(dnn_posteriors(net, c.vectors), axis=1)
    truth = np.array([c.languages.index(l) for l in c.labels])
    assert np.mean(pred == truth) > 0.6


def test_fifty_classes_beat_chance_tenfold():
    langs = [f"l{i:02d}" for i in range(50)]
    c = make_corpus(n_per_lang=20, langs=langs, dim=10, spread=3.0, seed=2)
    net, hist = train_dnn(init_dnn([10, 64, 50], seed=0, languages=langs), c.vectors, c.labels,
                          TrainConfig(epochs=60, batch_size=64, seed=0, validation_fraction=0.2),
                          return_history=True)
    rng = np.random.Generator(np.random.PCG64(0))
    val = rng.permutation(len(c))[:int(round(0.2 * len(c)))]
    pred = np.argmax(dnn_posteriors(net, c.vectors[val]), axis=1)
    truth = np.array([langs.index(c.labels[i]) for i in val])
    assert np.mean(pred == truth) >= 10 / 50


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    c = make_corpus(n_per_lang=20, langs=("a", "b"), dim=3, spread=50.0)
    with pytest.raises(DivergenceError):
        train_dnn(init_dnn([3, 50, 2], seed=0, languages=["a", "b"]), c.vectors * 1e6, c.labels,
                  TrainConfig(learning_rate=1e305, momentum=0.0, epochs=5))


def test_unknown_labels_rejected():
    c = make_corpus(n_per_lang=5, langs=("a", "b"), dim=3)
    with pytest.raises(DomainError):
        train_dnn(init_dnn([3, 2], seed=0, languages=["a", "z"]), c.vectors, c.labels)


def test_log_odds_definition(rng):
    logp = np.log(np.array([[0.7, 0.2, 0.1]]))
    s = posterior_log_odds(logp)
    assert s[0, 0] == pytest.approx(np.log(0.7) - np.log(0.15))
    assert s[0, 2] == pytest.approx(np.log(0.1) - np.log(0.45))
    extreme = posterior_log_odds(np.array([[0.0, -100.0]]))
    assert extreme[0, 0] == 30.0 and extreme[0, 1] == -30.0


def test_score_matrix_and_round_trip():
    c = make_corpus(n_per_lang=5, langs=("a", "b", "c"), dim=3)
    model = init_dnn([3, 4, 3], seed=0, languages=c.languages)
    m = score_dnn(model, c)
    assert m.kind == "dnn" and m.scores.shape == (15, 3)
    back = DnnModel.from_dict(model.to_dict())
    np.testing.assert_array_equal(score_dnn(back, c).scores, m.scores)


def test_estimator():
    c = make_corpus(n_per_lang=30, langs=("a", "b", "c"), dim=4, spread=3.0)
    est = DNNClassifier(hidden_layers=(16,), epochs=30, batch_size=16).fit(c.vectors, c.labels)
    assert est.get_params()["hidden_layers"] == (16,)
    assert np.mean(est.predict(c.vectors) == np.asarray(c.labels, dtype=object)) > 0.8
    assert est.decision_function(c.vectors).shape == (90, 3)
