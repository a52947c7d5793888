"""Scikit-learn wrapper: estimator contract, fit/predict round trip and
fallback behaviour."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from conftest import make_tree
from hiergeo.estimator import HierarchicalRegionClassifier
from hiergeo.exceptions import SchemaError


@pytest.fixture
def problem(tiny_tree):
    """Two separable router clusters planted in leaves 0 and 4."""
    rng = np.random.default_rng(0)
    X, y, hops = [], [], []
    for c, leaf in enumerate([0, 4]):
        path = tiny_tree.path_of_leaf(leaf)
        for _ in range(8):
            X.append(np.concatenate([np.eye(2)[c], rng.normal(0, 0.05, 2)]))
            y.append(path)
            hops.append(f"r{c}")
    return np.array(X), np.array(y), hops


def test_estimator_contract(tiny_tree):
    est = HierarchicalRegionClassifier(tree=tiny_tree, lr=1e-3, epochs=3)
    params = est.get_params()
    assert params["lr"] == 1e-3
    assert params["tree"] is tiny_tree
    est2 = clone(est)
    assert est2.get_params()["epochs"] == 3
    est2.set_params(epochs=5)
    assert est2.epochs == 5


def test_predict_before_fit_raises(tiny_tree, problem):
    X, _, hops = problem
    est = HierarchicalRegionClassifier(tree=tiny_tree)
    with pytest.raises(NotFittedError):
        est.predict(X, last_hop=hops)


def test_fit_predict_round_trip(tiny_tree, problem):
    X, y, hops = problem
    est = HierarchicalRegionClassifier(tree=tiny_tree, lr=5e-3, hidden_dim=8,
                                       epochs=40, seed=1)
    assert est.fit(X, y, last_hop=hops) is est
    preds = est.predict(X, last_hop=hops)
    assert preds.shape == (16, 3)
    assert (preds == y).all()
    assert est.score(X, y, last_hop=hops) == 1.0
    scores = est.decision_function(X, last_hop=hops)
    assert scores.shape == (16, tiny_tree.total_regions)
    assert len(est.history_) == 40


def test_unseen_cluster_falls_back_to_modal_path(tiny_tree, problem):
    X, y, hops = problem
    est = HierarchicalRegionClassifier(tree=tiny_tree, hidden_dim=8, epochs=5,
                                       seed=1)
    est.fit(X, y, last_hop=hops)
    preds = est.predict(X[:1], last_hop=["router-never-seen"])
    assert preds[0].tolist() == est.fallback_path_.per_granularity
    scores = est.decision_function(X[:1], last_hop=["router-never-seen"])
    assert (scores[0] == est.fallback_path_.multi_hot).all()


def test_input_validation(tiny_tree, problem):
    X, y, hops = problem
    est = HierarchicalRegionClassifier(tree=tiny_tree, epochs=1)
    with pytest.raises(SchemaError):
        est.fit(X, y[:, :2], last_hop=hops)  # wrong label width
    with pytest.raises(SchemaError):
        est.fit(X, y, last_hop=hops[:3])  # wrong number of keys
    with pytest.raises(SchemaError):
        est.fit(X.ravel(), y, last_hop=hops)  # not 2-D
    with pytest.raises(SchemaError):
        HierarchicalRegionClassifier().fit(X, y, last_hop=hops)  # no tree
