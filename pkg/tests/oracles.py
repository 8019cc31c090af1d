"""Independent reference implementations used by the tests.

Each oracle is deliberately naive: it follows the textbook definition
rather than the optimised code path it checks.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np


# -- edit distance -------------------------------------------------------------------

def lev_recursive(a: str, b: str) -> int:
    """Plain memoised recursion on prefixes (insert / delete / substitute, unit cost)."""

    @lru_cache(maxsize=None)
    def d(i: int, j: int) -> int:
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def all_strings(alphabet: str, max_len: int) -> list[str]:
    out = [""]
    for n in range(1, max_len + 1):
        out.extend("".join(p) for p in itertools.product(alphabet, repeat=n))
    return out


def lev_table(strings: list[str]) -> np.ndarray:
    """Distances between every pair of a prefix-closed string set.

    The same recursion as :func:`lev_recursive`, but the subproblems are the
    strings themselves: ``D[s, t]`` depends on ``D[s[:-1], t]``,
    ``D[s, t[:-1]]`` and ``D[s[:-1], t[:-1]]``, all of which are shorter
    pairs in the set.  Filled in order of total length with numpy.
    """
    index = {s: i for i, s in enumerate(strings)}
    n = len(strings)
    length = np.array([len(s) for s in strings])
    parent = np.array([index[s[:-1]] if s else -1 for s in strings])
    last = np.array([ord(s[-1]) if s else -1 for s in strings])
    D = np.full((n, n), -1, dtype=np.int64)
    by_len = [np.flatnonzero(length == k) for k in range(length.max() + 1)]
    for li, rows in enumerate(by_len):
        for lj, cols in enumerate(by_len):
            if li == 0 or lj == 0:
                D[np.ix_(rows, cols)] = max(li, lj)
                continue
            pi, pj = parent[rows], parent[cols]
            sub = D[np.ix_(pi, pj)] + (last[rows][:, None] != last[cols][None, :])
            dele = D[np.ix_(pi, cols)] + 1
            ins = D[np.ix_(rows, pj)] + 1
            D[np.ix_(rows, cols)] = np.minimum(np.minimum(sub, dele), ins)
    return D


# -- metrics ------------------------------------------------------------------------------

def auc_pairs(scores, labels) -> float:
    """Probability a random positive outscores a random negative, ties counting one half."""
    scores = list(scores)
    labels = list(labels)
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    if not pos or not neg:
        return float("nan")
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else 0.5 if p == q else 0.0
    return wins / (len(pos) * len(neg))


# -- gradients ----------------------------------------------------------------------------

def central_difference(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


# -- trees ----------------------------------------------------------------------------------

def best_gini_split(X: np.ndarray, y: np.ndarray, min_leaf: int = 1):
    """Exhaustive search for the split minimising weighted Gini impurity.

    Thresholds are midpoints between consecutive distinct values.  Returns
    ``(impurity_decrease, feature, threshold)``; ties keep the lowest
    feature and then the lowest threshold.
    """
    def gini(labels):
        if len(labels) == 0:
            return 0.0
        p = labels.mean()
        return 2 * p * (1 - p)

    n = len(y)
    parent = gini(y)
    best = (0.0, None, None)
    for f in range(X.shape[1]):
        values = np.unique(X[:, f])
        for lo, hi in zip(values[:-1], values[1:]):
            thr = (lo + hi) / 2
            left = X[:, f] <= thr
            nl = left.sum()
            if nl < min_leaf or n - nl < min_leaf:
                continue
            child = (nl * gini(y[left]) + (n - nl) * gini(y[~left])) / n
            gain = parent - child
            if gain > best[0] + 1e-12:
                best = (gain, f, thr)
    return best


# -- Shapley values -----------------------------------------------------------------------

def shapley_bruteforce(value, d: int) -> np.ndarray:
    """Shapley values of a set function ``value(frozenset)`` by the permutation-free formula."""
    phi = np.zeros(d)
    players = range(d)
    for i in players:
        others = [j for j in players if j != i]
        for k in range(d):
            w = math.factorial(k) * math.factorial(d - k - 1) / math.factorial(d)
            for S in itertools.combinations(others, k):
                S = frozenset(S)
                phi[i] += w * (value(S | {i}) - value(S))
    return phi


def tree_expectation(tree, x: np.ndarray, present: frozenset, node: int = 0) -> float:
    """Cover-weighted expectation of a single tree's output given the features in ``present``."""
    if tree.left[node] < 0:
        return float(tree.value[node])
    f = int(tree.feature[node])
    left, right = int(tree.left[node]), int(tree.right[node])
    if f in present:
        child = left if x[f] <= tree.threshold[node] else right
        return tree_expectation(tree, x, present, child)
    total = tree.cover[node]
    return (tree.cover[left] / total * tree_expectation(tree, x, present, left)
            + tree.cover[right] / total * tree_expectation(tree, x, present, right))
