import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

import xokde.engine as engine
from xokde.bandwidth import BandwidthState
from xokde.classifier import ClassifierModel, EngineConfig
from xokde.gauss import whitening_from


def two_blobs(seed=0, n=30):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(size=(n, 2)), rng.normal(size=(n, 2)) + 10.0])
    y = ["A"] * n + ["B"] * n
    return X, y


def fixed_unit_bandwidth(model, n_eff):
    d = model.d
    T = whitening_from(np.zeros(d), np.eye(d))
    return BandwidthState(np.eye(d), np.eye(d), T, 1.0, 0.0)


class TestObserve:
    def test_new_label_creates_model(self):
        clf = ClassifierModel()
        clf.observe([1.0, 2.0], "x")
        assert clf.labels == ["x"]
        assert len(clf.classes["x"]) == 1 and clf.classes["x"].n_eff == 1.0

    def test_priors_are_frequencies(self):
        clf = ClassifierModel()
        rng = np.random.default_rng(1)
        for i in range(100):
            clf.observe(rng.normal(size=1), "a" if i % 5 < 3 else "b")
        assert clf.priors == pytest.approx({"a": 0.6, "b": 0.4})

    def test_interleaving_leaves_other_classes_untouched(self):
        rng = np.random.default_rng(2)
        clf = ClassifierModel()
        clf.fit(rng.normal(size=(12, 2)), ["a"] * 12)
        snapshot = clf.classes["a"].to_dict()
        clf.fit(rng.normal(size=(12, 2)), ["b"] * 12)
        assert clf.classes["a"].to_dict() == snapshot

    def test_class_order_does_not_matter(self):
        X, y = two_blobs(3)
        a = ClassifierModel().fit(X, y)
        order = np.r_[np.arange(30, 60), np.arange(30)]
        b = ClassifierModel().fit(X[order], [y[i] for i in order])
        for label in ("A", "B"):
            assert a.classes[label].to_dict() == b.classes[label].to_dict()

    def test_dimension_mismatch(self):
        clf = ClassifierModel()
        clf.observe([1.0, 2.0], 0)
        with pytest.raises(ValueError):
            clf.observe([1.0], 0)


class TestPredict:
    def test_separated_classes(self):
        X, y = two_blobs()
        clf = ClassifierModel().fit(X, y)
        assert clf.predict(np.zeros(2)) == "A"
        assert clf.predict(np.full(2, 10.0)) == "B"

    def test_diagonal_engine(self):
        X, y = two_blobs(4)
        clf = ClassifierModel(EngineConfig(diagonal=True)).fit(X, y)
        assert clf.predict_many(np.array([[0.0, 0.0], [10.0, 10.0]])) == ["A", "B"]

    def test_equal_likelihoods_follow_prior(self, monkeypatch):
        clf = ClassifierModel()
        clf.fit(np.zeros((10, 1)), ["rare"] + ["common"] * 9)
        monkeypatch.setattr(ClassifierModel, "class_log_likelihoods",
                            lambda self, X: np.zeros((len(np.atleast_2d(X)), 2)))
        assert clf.priors == pytest.approx({"common": 0.9, "rare": 0.1})
        assert clf.predict([0.0]) == "common"

    def test_ties_break_in_sorted_label_order(self, monkeypatch):
        clf = ClassifierModel()
        clf.fit(np.zeros((4, 1)), ["b", "a", "b", "a"])
        monkeypatch.setattr(ClassifierModel, "class_log_likelihoods",
                            lambda self, X: np.zeros((len(np.atleast_2d(X)), 2)))
        assert clf.predict([0.0]) == "a"

    def test_invariant_to_common_log_offset(self, monkeypatch):
        X, y = two_blobs(5)
        clf = ClassifierModel().fit(X, y)
        test = np.random.default_rng(6).normal(5, 4, size=(40, 2))
        base = clf.predict_many(test)
        original = ClassifierModel.class_log_likelihoods
        monkeypatch.setattr(ClassifierModel, "class_log_likelihoods",
                            lambda self, X: original(self, X) + 1234.5)
        assert clf.predict_many(test) == base

    def test_class_without_bandwidth_scores_minus_infinity(self):
        clf = ClassifierModel()
        clf.fit(np.array([[0.0], [1.0], [5.0]]), ["a", "a", "b"])
        assert clf.unavailable() == ["b"]
        with pytest.warns(UserWarning):
            scores = clf.class_log_likelihoods([[5.0]])
        assert scores[0, 1] == -math.inf
        with pytest.warns(UserWarning):
            assert clf.predict([5.0]) == "a"


class TestNegLogLikelihood:
    def test_lone_delta_with_unit_bandwidth(self, monkeypatch):
        monkeypatch.setattr(engine, "estimate_bandwidth",
                            lambda m, n: fixed_unit_bandwidth(m, n))
        clf = ClassifierModel()
        clf.observe([0.0], "a")
        assert clf.avg_neg_log_likelihood([[0.0]], ["a"]) == pytest.approx(0.9189, abs=1e-4)

    def test_outlier_increases_metric(self):
        X, y = two_blobs(7)
        clf = ClassifierModel().fit(X, y)
        test, labels = two_blobs(8, 10)
        base = clf.avg_neg_log_likelihood(test, labels)
        worse = clf.avg_neg_log_likelihood(np.vstack([test, [[50.0, -50.0]]]), labels + ["A"])
        assert worse > base

    def test_uses_true_class_model(self):
        X, y = two_blobs(9)
        clf = ClassifierModel().fit(X, y)
        pt = np.array([[0.5, -0.5]])
        expected = -clf.classes["B"].log_likelihood(pt)[0]
        assert_allclose(clf.avg_neg_log_likelihood(pt, ["B"]), expected)

    def test_unknown_class_is_excluded(self):
        X, y = two_blobs(10)
        clf = ClassifierModel().fit(X, y)
        val, excluded = clf.avg_neg_log_likelihood(X[:3], ["A", "A", "Z"], return_excluded=True)
        assert excluded == 1 and np.isfinite(val)
