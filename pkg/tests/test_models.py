from __future__ import annotations

import json
import math

import numpy as np
import pytest

from dealscope.dataset import Dataset
from dealscope.models import (
    DEFAULTS,
    DecisionTree,
    GradientBoosting,
    KNearestNeighbors,
    LogisticRegression,
    ModelArtifact,
    ModelSpec,
    Tree,
    export_tree,
    fit,
)
from dealscope.models.linear import hinge_loss_grad, logistic_loss_grad, platt_scaling
from dealscope.models.tree import export_dot

from oracles import best_gini_split, central_difference


def problem(seed, n=120, d=4):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    w = rng.normal(size=d)
    y = (rng.random(n) < 1 / (1 + np.exp(-(X @ w)))).astype(float)
    return X, y


def as_dataset(X, y):
    d = X.shape[1]
    return Dataset(X, y.astype(int), [f"f{j}" for j in range(d)], ["financial"] * d,
                   np.array([f"r{i}" for i in range(len(y))], dtype=object))


@pytest.mark.parametrize("seed", range(5))
def test_logistic_gradient_matches_finite_differences(seed):
    X, y = problem(seed)
    params = np.random.default_rng(seed + 100).normal(size=X.shape[1] + 1)
    _, grad = logistic_loss_grad(params, X, y, 0.01)
    numeric = central_difference(lambda p: logistic_loss_grad(p, X, y, 0.01)[0], params)
    np.testing.assert_allclose(grad, numeric, rtol=1e-5, atol=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_hinge_gradient_matches_finite_differences(seed):
    X, y = problem(seed)
    params = np.random.default_rng(seed + 200).normal(size=X.shape[1] + 1)
    _, grad = hinge_loss_grad(params, X, y, 0.01)
    numeric = central_difference(lambda p: hinge_loss_grad(p, X, y, 0.01)[0], params)
    np.testing.assert_allclose(grad, numeric, rtol=1e-5, atol=1e-8)


def test_gd_and_newton_agree():
    X, y = problem(1, n=400, d=3)
    gd = LogisticRegression(max_epochs=20000, tol=1e-9).fit(X, y)
    nt = LogisticRegression(solver="newton", tol=1e-12).fit(X, y)
    assert gd.converged and nt.converged
    np.testing.assert_allclose(gd.params_, nt.params_, atol=1e-6)


def test_wald_errors_match_numeric_information():
    X, y = problem(2, n=500, d=3)
    model = LogisticRegression(solver="newton", l2=0.0, tol=1e-12).fit(X, y, ["a", "b", "c"])
    Z = model.scaler.transform(X)

    def nll(p):
        return len(y) * logistic_loss_grad(p, Z, y, 0.0)[0]

    # Hessian by central differences of the analytic-free loss
    p0, h, k = model.params_, 1e-4, len(model.params_)
    H = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            ei, ej = np.eye(k)[i] * h, np.eye(k)[j] * h
            H[i, j] = (nll(p0 + ei + ej) - nll(p0 + ei - ej) - nll(p0 - ei + ej) + nll(p0 - ei - ej)) / (4 * h * h)
    se = np.sqrt(np.diag(np.linalg.inv(H)))
    inf = model.inference
    assert inf.names == ["const", "a", "b", "c"]
    np.testing.assert_allclose(inf.standard_errors, se, rtol=1e-4)
    np.testing.assert_allclose(inf.t_statistics, p0 / se, rtol=1e-4)
    expected_p = [math.erfc(abs(t) / math.sqrt(2)) for t in p0 / se]
    np.testing.assert_allclose(inf.p_values, expected_p, rtol=1e-3, atol=1e-12)


def test_wald_flags_singular_information():
    X, y = problem(3, n=100, d=2)
    X = np.column_stack([X, X[:, 0]])       # duplicated column
    model = LogisticRegression(max_epochs=50).fit(X, y)
    assert not model.inference.se_available
    assert np.isnan(model.inference.standard_errors).all()


def test_platt_matches_direct_minimisation():
    from scipy.optimize import minimize

    rng = np.random.default_rng(0)
    m = rng.normal(size=300)
    y = (rng.random(300) < 1 / (1 + np.exp(-2 * m))).astype(float)
    a, c = platt_scaling(m, y)
    n_pos, n_neg = y.sum(), len(y) - y.sum()
    t = np.where(y == 1, (n_pos + 1) / (n_pos + 2), 1 / (n_neg + 2))

    def loss(v):
        z = v[0] * m + v[1]
        return np.sum(np.logaddexp(0, z) - t * z)

    ref = minimize(loss, [1.0, 0.0], method="BFGS", options={"gtol": 1e-10}).x
    np.testing.assert_allclose([a, c], ref, atol=1e-5)


@pytest.mark.parametrize("seed", range(8))
def test_decision_stump_matches_exhaustive_split(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(60, 3)).round(1)
    y = (X[:, seed % 3] + 0.5 * rng.normal(size=60) > 0).astype(float)
    stump = DecisionTree(max_depth=1, min_samples_leaf=1).fit(X, y).tree
    gain, feature, threshold = best_gini_split(X, y)
    assert stump.feature[0] == feature
    assert stump.threshold[0] == pytest.approx(threshold)


def test_tree_invariant_to_label_flip():
    X, y = problem(5, n=200)
    a = DecisionTree(max_depth=4, min_samples_leaf=3).fit(X, y).tree
    b = DecisionTree(max_depth=4, min_samples_leaf=3).fit(X, 1 - y).tree
    np.testing.assert_array_equal(a.feature, b.feature)
    np.testing.assert_array_equal(a.threshold, b.threshold)
    np.testing.assert_allclose(a.value, 1 - b.value)


def test_tree_respects_depth_and_leaf_size():
    X, y = problem(6, n=300)
    tree = DecisionTree(max_depth=3, min_samples_leaf=10).fit(X, y).tree
    assert tree.max_depth <= 3
    assert tree.cover[tree.is_leaf].min() >= 10
    # each internal node's cover is the sum of its children's
    inner = np.flatnonzero(~tree.is_leaf)
    np.testing.assert_allclose(tree.cover[inner], tree.cover[tree.left[inner]] + tree.cover[tree.right[inner]])


@pytest.mark.parametrize("seed", range(3))
def test_boosting_loss_non_increasing(seed):
    X, y = problem(seed, n=300, d=5)
    model = GradientBoosting(n_estimators=50).fit(X, y)
    assert np.all(np.diff(model.loss_history) <= 1e-12)


def test_boosting_constant_label():
    X = np.random.default_rng(0).normal(size=(50, 2))
    art = fit(ModelSpec("XGB", {"n_estimators": 5}), as_dataset(X, np.ones(50)))
    assert np.all(art.predict_proba(X) >= 0.99)
    with pytest.raises(ValueError):
        fit(ModelSpec("LR"), as_dataset(X, np.ones(50)))


def test_knn_matches_brute_force():
    X, y = problem(7, n=150)
    model = KNearestNeighbors(k=5).fit(X, y)
    Q = np.random.default_rng(8).normal(size=(20, X.shape[1]))
    mean, std = X.mean(axis=0), X.std(axis=0)
    Z, Zq = (X - mean) / std, (Q - mean) / std
    for q, p in zip(Zq, model.predict_proba(Q)):
        d = np.linalg.norm(Z - q, axis=1)
        assert p == pytest.approx(y[np.argsort(d, kind="stable")[:5]].mean())
    with pytest.raises(ValueError):
        KNearestNeighbors(k=500).fit(X, y)


@pytest.mark.parametrize("kind", ["LR", "DT", "RF", "KNN", "SVM", "XGB"])
def test_artifact_json_round_trip(kind, tmp_path):
    X, y = problem(9, n=120)
    small = {"RF": {"n_estimators": 5}, "XGB": {"n_estimators": 5}}.get(kind, {})
    art = fit(ModelSpec(kind, small, seed=3), as_dataset(X, y))
    art.save(tmp_path / "m.json")
    back = ModelArtifact.load(tmp_path / "m.json")
    np.testing.assert_array_equal(back.predict_proba(X), art.predict_proba(X))
    assert back.to_json() == art.to_json()
    assert set(json.loads(art.to_json())["hyperparameters"]) == set(DEFAULTS[kind])


def test_artifact_checks():
    X, y = problem(9, n=60)
    art = fit(ModelSpec("LR"), as_dataset(X, y))
    with pytest.raises(ValueError, match="dimension"):
        art.predict_proba(X[:, :2])
    bad = X.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError, match="impute"):
        art.predict_proba(bad)
    with pytest.raises(ValueError, match="schema version"):
        ModelArtifact.from_dict({**art.to_dict(), "schema_version": 99})
    with pytest.raises(ValueError):
        ModelSpec("LR", {"depth": 3})
    with pytest.raises(ValueError):
        ModelSpec("GBM")


def test_random_forest_seeded():
    X, y = problem(10, n=150)
    a = fit(ModelSpec("RF", {"n_estimators": 10}, seed=1), as_dataset(X, y))
    b = fit(ModelSpec("RF", {"n_estimators": 10}, seed=1), as_dataset(X, y))
    np.testing.assert_array_equal(a.predict_proba(X), b.predict_proba(X))


GOLDEN_DOT = """digraph Tree {
node [shape=box, fontname="helvetica"] ;
edge [fontname="helvetica"] ;
0 [label="age <= 2.5\\nsamples = 10\\nvalue = [6, 4]"] ;
1 [label="samples = 4\\nvalue = [0, 4]"] ;
2 [label="samples = 6\\nvalue = [6, 0]"] ;
0 -> 1 [headlabel="True"] ;
0 -> 2 [headlabel="False"] ;
}
"""


def test_export_dot_golden():
    tree = Tree(np.array([0, -1, -1]), np.array([2.5, 0.0, 0.0]), np.array([1, -1, -1]),
                np.array([2, -1, -1]), np.array([0.4, 1.0, 0.0]), np.array([10.0, 4.0, 6.0]),
                np.array([4.0, 4.0, 0.0]))
    assert export_dot(tree, ["age"]) == GOLDEN_DOT
    assert Tree.from_dict(tree.to_dict()).to_dict() == tree.to_dict()


def test_export_tree_from_artifact():
    X = np.array([[0.0], [1.0], [2.0], [3.0], [4.0], [5.0]] * 2)
    y = (X[:, 0] > 2.5).astype(float)
    art = fit(ModelSpec("DT", {"min_samples_leaf": 1}), Dataset(X, y, ["age"], ["financial"],
                                                                 np.arange(12).astype(str)))
    dot = export_tree(art)
    assert 'label="age <= 2.5' in dot
    with pytest.raises(IndexError):
        export_tree(art, 3)
    with pytest.raises(ValueError):
        export_tree(fit(ModelSpec("LR"), as_dataset(*problem(0))))
