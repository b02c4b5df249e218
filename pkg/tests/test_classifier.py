from __future__ import annotations

import random

import numpy as np
import pytest

from mlinter import classifier as clf
from mlinter.classifier import ClassifierConfig, TrainingError, featurize, feature_strings, objective, train_arrays
from mlinter.dataset import EXTANT, FIXED, VIOLATION, Example, LearningConfig, TrainingSet


def test_featurize_example():
    config = ClassifierConfig(feature_dims=2**20)
    feats = feature_strings("a == b", config)
    assert "t1|Identifier:a" in feats and "t1|Operator:==" in feats
    assert "t2|<s>\x1fIdentifier:a" in feats
    assert "t3|Identifier:a\x1fOperator:==\x1fIdentifier:b" in feats
    assert "k2|Operator\x1fIdentifier" in feats
    vec = featurize("a == b", config)
    assert sum(vec.values()) == len(feats)
    assert all(0 <= k < config.feature_dims for k in vec)


def test_featurize_ignores_layout():
    config = ClassifierConfig()
    assert featurize("a  ==  b // hi", config) == featurize("a == b", config)
    assert featurize("", config) == {} == featurize("   // only a comment", config)


def test_featurize_distinguishes_quotes():
    config = ClassifierConfig()
    assert featurize("x = 'a';", config) != featurize('x = "a";', config)


def test_hashing_is_stable():
    # pinned so that models stay loadable across releases
    assert clf._bucket("t1|Identifier:a", 2**18) == clf._bucket("t1|Identifier:a", 2**18)
    import hashlib

    digest = hashlib.blake2b(b"t1|Identifier:a", digest_size=8).digest()
    assert clf._bucket("t1|Identifier:a", 2**18) == int.from_bytes(digest, "little") % 2**18


def test_config_validation():
    for bad in (dict(feature_dims=1000), dict(epochs=0), dict(decision_threshold=1.0), dict(batch_size=0), dict(token_ngram_orders=())):
        with pytest.raises(ValueError):
            ClassifierConfig(**bad)


def toy_data(n=40, seed=0, dims=64):
    rng = np.random.default_rng(seed)
    data, labels = [], []
    for _ in range(n):
        idx = np.sort(rng.choice(dims, size=5, replace=False))
        data.append((idx, rng.integers(1, 3, size=5).astype(float)))
        labels.append(int(rng.integers(0, 2)))
    return data, labels


def test_gradient_matches_finite_differences():
    dims = 64
    data, labels = toy_data(dims=dims)
    rng = np.random.default_rng(1)
    w = rng.normal(scale=0.3, size=dims)
    b = 0.2
    l2 = 0.01
    _, grad, grad_b = objective(w, b, data, labels, l2)
    h = 1e-6
    for j in range(dims):
        e = np.zeros(dims)
        e[j] = h
        num = (objective(w + e, b, data, labels, l2)[0] - objective(w - e, b, data, labels, l2)[0]) / (2 * h)
        assert num == pytest.approx(grad[j], rel=1e-4, abs=1e-8)
    num_b = (objective(w, b + h, data, labels, l2)[0] - objective(w, b - h, data, labels, l2)[0]) / (2 * h)
    assert num_b == pytest.approx(grad_b, rel=1e-4)


def test_gradient_on_real_features():
    config = ClassifierConfig(feature_dims=2**12)
    lines = ["a == b", "a === b", "x = 1;", "if (x != y) {", "if (x !== y) {", "var q = 'z';"]
    data = [clf._as_arrays(featurize(t, config)) for t in lines]
    labels = [1, 0, 0, 1, 0, 0]
    rng = np.random.default_rng(2)
    w = rng.normal(scale=0.1, size=config.feature_dims)
    _, grad, _ = objective(w, -0.1, data, labels, 1e-3)
    coords = rng.choice(config.feature_dims, size=100, replace=False)
    coords = np.union1d(coords, np.concatenate([idx for idx, _ in data]))[:100]
    h = 1e-6
    for j in coords:
        e = np.zeros(config.feature_dims)
        e[j] = h
        num = (objective(w + e, -0.1, data, labels, 1e-3)[0] - objective(w - e, -0.1, data, labels, 1e-3)[0]) / (2 * h)
        assert num == pytest.approx(grad[j], rel=1e-4, abs=1e-9)


def test_full_batch_loss_decreases():
    data, labels = toy_data(n=60, seed=3)
    config = ClassifierConfig(feature_dims=64, epochs=30, learning_rate=0.5, batch_size=60)
    model = train_arrays(data, labels, config)
    trace = model.loss_trace
    assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))
    assert trace[-1] < trace[0]


def test_scaled_sgd_matches_naive_sgd():
    data, labels = toy_data(n=20, seed=4, dims=32)
    config = ClassifierConfig(feature_dims=32, epochs=3, learning_rate=0.2, l2=0.05, seed=9)
    model = train_arrays(data, labels, config)
    # plain SGD with the same visiting order
    rng = random.Random(config.seed)
    w, b = np.zeros(32), 0.0
    order = list(range(len(data)))
    for _ in range(config.epochs):
        rng.shuffle(order)
        for i in order:
            idx, vals = data[i]
            g = clf._sigmoid(float(w[idx] @ vals) + b) - labels[i]
            w *= 1 - config.learning_rate * config.l2
            w[idx] -= config.learning_rate * g * vals
            b -= config.learning_rate * g
    np.testing.assert_allclose(model.weights, w, rtol=1e-9, atol=1e-12)
    assert model.bias == pytest.approx(b)


def test_training_deterministic():
    data, labels = toy_data()
    config = ClassifierConfig(feature_dims=64, seed=3)
    a, b = train_arrays(data, labels, config), train_arrays(data, labels, config)
    assert np.array_equal(a.weights, b.weights) and a.bias == b.bias


def test_zero_model_scores_half():
    config = ClassifierConfig(feature_dims=16)
    model = clf.TrainedClassifier("eqeqeq", np.zeros(16), 0.0, config)
    p = clf.predict(model, "a == b")
    assert p.score == 0.5 and p.non_compliant


def test_training_errors():
    with pytest.raises(TrainingError):
        train_arrays([], [], ClassifierConfig())
    data, _ = toy_data(n=4)
    with pytest.raises(TrainingError):
        train_arrays(data, [1, 1, 1, 1], ClassifierConfig(feature_dims=64))


def eqeqeq_training_set():
    rng = random.Random(0)
    names = ["a", "b", "x", "count", "user", "item", "total", "i"]
    examples = []
    for i in range(60):
        left, right = rng.choice(names), rng.choice(names + ["0", "null", '"s"'])
        op = rng.choice(["==", "!="])
        examples.append(Example(f"if ({left} {op} {right}) {{", VIOLATION, 0, i))
        examples.append(Example(f"if ({left} {op}= {right}) {{", FIXED, 0, i))
        examples.append(Example(f"{left} = {right};", EXTANT, 1, i))
    return TrainingSet("eqeqeq", LearningConfig(180, "VFE"), examples)


def test_learns_separable_toy_rule():
    model = clf.train(eqeqeq_training_set(), ClassifierConfig(epochs=20))
    assert clf.predict(model, "if (foo == bar) {").non_compliant
    assert not clf.predict(model, "if (foo === bar) {").non_compliant
    assert not clf.predict(model, "foo = bar;").non_compliant


def test_backend_and_serialization(tmp_path):
    ts = eqeqeq_training_set()
    backend = clf.LinearBackend(ClassifierConfig(feature_dims=2**12))
    model = backend.train(ts, seed=5)
    assert model.config.seed == 5
    clf.save_model(model, tmp_path / "m.json")
    loaded = clf.load_model(tmp_path / "m.json")
    assert np.array_equal(loaded.weights, model.weights) and loaded.bias == model.bias
    assert loaded.config == model.config
    texts = ["if (a == b) {", "x = 1;", "a === b"]
    assert backend.predict(loaded, texts) == backend.predict(model, texts)
    assert [clf.predict(loaded, t).non_compliant for t in texts] == backend.predict(model, texts)


def test_load_rejects_bad_models(tmp_path):
    model = clf.TrainedClassifier("r", np.zeros(16), 0.0, ClassifierConfig(feature_dims=16))
    data = model.to_json()
    with pytest.raises(ValueError):
        clf.TrainedClassifier.from_json(data | {"format": "other"})
    with pytest.raises(ValueError):
        clf.TrainedClassifier.from_json(data | {"weights": [0.0] * 8})


def test_stub_backend():
    b = clf.AlwaysNonCompliantBackend()
    assert b.predict(b.train(eqeqeq_training_set(), 0), ["a", "b"]) == [True, True]
