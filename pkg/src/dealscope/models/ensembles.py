"""CART decision tree, random forest and second-order gradient boosting."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from dealscope.models.base import RAW_CLIP, Classifier, check_training_data, log1pexp, sigmoid
from dealscope.models.tree import Tree, grow_tree, presort


class TreeModel(Classifier):
    """Shared prediction and serialisation for models made of ``Tree`` objects."""

    trees: list[Tree]

    def tree_outputs(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.zeros(len(X))
        for tree in self.trees:
            out += tree.predict(X)
        return out

    def state(self):
        return {"trees": [t.to_dict() for t in self.trees]}

    def load_state(self, state):
        self.trees = [Tree.from_dict(t) for t in state["trees"]]


class DecisionTree(TreeModel):
    kind = "DT"

    def __init__(self, max_depth=6, min_samples_leaf=5):
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.trees = []

    def params(self):
        return {"max_depth": self.max_depth, "min_samples_leaf": self.min_samples_leaf}

    def fit(self, X, y, feature_names=None):
        X, y = check_training_data(X, y)
        w = np.ones(len(y))
        self.trees = [grow_tree(X, w, y, w, criterion="gini", max_depth=self.max_depth,
                                min_samples_leaf=self.min_samples_leaf)]
        return self

    @property
    def tree(self) -> Tree:
        return self.trees[0]

    def raw_score(self, X):
        return self.tree_outputs(X)

    def predict_proba(self, X):
        return self.raw_score(X)


def _max_features(rule, d: int) -> int | None:
    if rule is None or rule == "all":
        return None
    if rule == "sqrt":
        return max(1, int(math.sqrt(d)))
    if rule == "log2":
        return max(1, int(math.log2(d)))
    if isinstance(rule, float):
        return max(1, int(rule * d))
    return int(rule)


class RandomForest(TreeModel):
    """Bagged Gini trees with a fresh random feature subset at every node.

    A bootstrap sample is represented as integer row weights, so every tree
    reuses the single presorted copy of the training matrix.
    """

    kind = "RF"

    def __init__(self, n_estimators=100, max_depth=None, min_samples_leaf=1, max_features="sqrt",
                 bootstrap=True, seed=0, threads=1):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.seed = seed
        self.threads = threads
        self.trees = []

    def params(self):
        return {"n_estimators": self.n_estimators, "max_depth": self.max_depth,
                "min_samples_leaf": self.min_samples_leaf, "max_features": self.max_features,
                "bootstrap": self.bootstrap}

    def fit(self, X, y, feature_names=None):
        X, y = check_training_data(X, y)
        n, d = X.shape
        columns = presort(X)
        m = _max_features(self.max_features, d)
        seeds = np.random.SeedSequence(self.seed).spawn(self.n_estimators)

        def one(ss):
            rng = np.random.default_rng(ss)
            if self.bootstrap:
                w = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(float)
            else:
                w = np.ones(n)
            return grow_tree(X, w, w * y, w, criterion="gini", columns=columns,
                             max_depth=self.max_depth, min_samples_leaf=self.min_samples_leaf,
                             max_features=m, rng=rng)

        if self.threads > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                self.trees = list(pool.map(one, seeds))
        else:
            self.trees = [one(ss) for ss in seeds]
        return self

    def raw_score(self, X):
        return self.tree_outputs(X) / len(self.trees)

    def predict_proba(self, X):
        return self.raw_score(X)


class GradientBoosting(TreeModel):
    """Boosted regression trees on the logistic loss with second-order splits.

    Each tree is fitted to the gradient ``p - y`` and hessian ``p (1 - p)``
    of the current model; leaf weights ``-G / (H + lambda)`` are stored
    already multiplied by the learning rate, so the raw score is
    ``base_score + sum(tree outputs)``.
    """

    kind = "XGB"

    def __init__(self, n_estimators=100, max_depth=6, learning_rate=0.1, reg_lambda=1.0, gamma=0.0,
                 min_child_weight=1.0):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.reg_lambda = reg_lambda
        self.gamma = gamma
        self.min_child_weight = min_child_weight
        self.base_score = 0.0
        self.trees = []
        self.loss_history: list[float] = []

    def params(self):
        return {"n_estimators": self.n_estimators, "max_depth": self.max_depth,
                "learning_rate": self.learning_rate, "reg_lambda": self.reg_lambda,
                "gamma": self.gamma, "min_child_weight": self.min_child_weight}

    def fit(self, X, y, feature_names=None):
        X, y = check_training_data(X, y)
        n = len(y)
        columns = presort(X)
        mean = min(max(y.mean(), 1e-300), 1.0)
        self.base_score = float(np.clip(math.log(mean) - math.log1p(-mean) if mean < 1 else RAW_CLIP,
                                        -RAW_CLIP, RAW_CLIP))
        raw = np.full(n, self.base_score)
        ones = np.ones(n)
        self.trees = []
        self.loss_history = [logistic_loss(raw, y)]
        for _ in range(self.n_estimators):
            p = sigmoid(raw)
            tree = grow_tree(X, p - y, p * (1.0 - p), ones, criterion="newton", columns=columns,
                             max_depth=self.max_depth, min_samples_leaf=0.0,
                             min_child_weight=self.min_child_weight, reg_lambda=self.reg_lambda,
                             gamma=self.gamma)
            tree = tree.scaled(self.learning_rate)
            raw = raw + tree.predict(X)
            self.trees.append(tree)
            self.loss_history.append(logistic_loss(raw, y))
        return self

    def raw_score(self, X):
        return self.base_score + self.tree_outputs(X)

    def predict_proba(self, X):
        return sigmoid(np.clip(self.raw_score(X), -RAW_CLIP, RAW_CLIP))

    def state(self):
        return {"base_score": self.base_score, "trees": [t.to_dict() for t in self.trees],
                "loss_history": self.loss_history}

    def load_state(self, state):
        super().load_state(state)
        self.base_score = float(state["base_score"])
        self.loss_history = list(state["loss_history"])


def logistic_loss(raw, y) -> float:
    return float(np.mean(log1pexp(raw) - y * raw))
