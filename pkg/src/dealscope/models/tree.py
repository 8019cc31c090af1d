"""Binary decision trees grown level by level with exact greedy splits.

Every feature column is presorted once per fit.  Each level then makes
one pass over every sorted column, accumulating left-side statistics per
open node, which scores every split position of every node in O(n d).
Only thresholds between distinct neighbouring values are considered, and
a row goes left when ``x[feature] <= threshold``.

Two split criteria share the grower: Gini impurity on weighted class
counts (CART, random forest) and the second-order gain on gradient and
hessian sums used by boosting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

_GAIN_EPS = 1e-12


@dataclass
class Tree:
    feature: np.ndarray    # split feature, -1 at leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray      # node output (positive fraction or raw score)
    cover: np.ndarray      # weighted training rows reaching the node
    positives: np.ndarray  # weighted positive rows (NaN for boosting trees)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def is_leaf(self) -> np.ndarray:
        return self.left < 0

    @property
    def max_depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for node in range(self.n_nodes):
            if self.left[node] >= 0:
                depth[self.left[node]] = depth[node] + 1
                depth[self.right[node]] = depth[node] + 1
        return int(depth.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row."""
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.left[node] >= 0)
        while active.size:
            cur = node[active]
            go_left = X[active, self.feature[cur]] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
            active = active[self.left[node[active]] >= 0]
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def scaled(self, factor: float) -> "Tree":
        return Tree(self.feature, self.threshold, self.left, self.right, self.value * factor,
                    self.cover, self.positives)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "cover": self.cover.tolist(),
            "positives": [None if np.isnan(v) else v for v in self.positives.tolist()],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "Tree":
        return cls(
            np.asarray(payload["feature"], dtype=np.int64),
            np.asarray(payload["threshold"], dtype=float),
            np.asarray(payload["left"], dtype=np.int64),
            np.asarray(payload["right"], dtype=np.int64),
            np.asarray(payload["value"], dtype=float),
            np.asarray(payload["cover"], dtype=float),
            np.asarray([np.nan if v is None else v for v in payload["positives"]], dtype=float),
        )


@dataclass
class SortedColumns:
    """Per-feature row order and sorted values, shared by every tree of a fit."""

    order: np.ndarray   # (d, n) row indices, ascending by value per feature
    values: np.ndarray  # (d, n) the matching feature values

    def compact(self, keep: np.ndarray) -> "SortedColumns":
        """Drop rows where ``keep`` is False, preserving each column's order."""
        mask = keep[self.order]
        m = int(mask[0].sum())
        return SortedColumns(self.order[mask].reshape(-1, m), self.values[mask].reshape(-1, m))


def presort(X: np.ndarray) -> SortedColumns:
    X = np.asarray(X, dtype=float)
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int32))
    values = np.ascontiguousarray(np.take_along_axis(X, order.T.astype(np.int64), axis=0).T)
    return SortedColumns(order, values)


class _Nodes:
    def __init__(self):
        self.feature, self.threshold, self.left, self.right = [], [], [], []
        self.value, self.cover, self.positives = [], [], []

    def add(self, value, cover, positives) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(value))
        self.cover.append(float(cover))
        self.positives.append(float(positives))
        return len(self.feature) - 1

    def freeze(self) -> Tree:
        return Tree(np.array(self.feature, dtype=np.int64), np.array(self.threshold, dtype=float),
                    np.array(self.left, dtype=np.int64), np.array(self.right, dtype=np.int64),
                    np.array(self.value, dtype=float), np.array(self.cover, dtype=float),
                    np.array(self.positives, dtype=float))


@njit(cache=True, nogil=True)
def _scan_level(order, values, local, K, stats, allowed, tot, newton, reg_lambda, gamma,
                min_leaf, min_child):
    """Best split per open node: one pass over each presorted column.

    ``stats`` columns are (a, b, weight) per row and ``tot`` holds their
    per-node totals.  Rows with ``local[row] >= K`` are skipped.
    """
    d, n = order.shape
    best_gain = np.full(K, -np.inf)
    best_feat = np.full(K, -1, np.int64)
    best_thr = np.zeros(K)
    best_left = np.zeros((K, 3))
    acc = np.zeros((K, 3))
    last = np.empty(K)
    parent = np.empty(K)
    for k in range(K):
        if newton:
            parent[k] = tot[k, 0] * tot[k, 0] / (tot[k, 1] + reg_lambda)
        else:
            parent[k] = 2.0 * tot[k, 1] * (tot[k, 0] - tot[k, 1]) / tot[k, 0]
    for f in range(d):
        acc[:] = 0.0
        last[:] = np.nan
        for i in range(n):
            r = order[f, i]
            k = local[r]
            if k >= K or not allowed[k, f]:
                continue
            x = values[f, i]
            # NaN in last[k] means no row of node k seen yet for this feature
            if x > last[k]:
                lw = acc[k, 2]
                rw = tot[k, 2] - lw
                if lw >= min_leaf and rw >= min_leaf:
                    la = acc[k, 0]
                    lb = acc[k, 1]
                    ra = tot[k, 0] - la
                    rb = tot[k, 1] - lb
                    if newton:
                        if lb >= min_child and rb >= min_child:
                            gain = 0.5 * (la * la / (lb + reg_lambda) + ra * ra / (rb + reg_lambda)
                                          - parent[k]) - gamma
                        else:
                            gain = -np.inf
                    else:
                        gain = parent[k] - (2.0 * lb * (la - lb) / la + 2.0 * rb * (ra - rb) / ra)
                    if gain > best_gain[k]:
                        best_gain[k] = gain
                        best_feat[k] = f
                        thr = last[k] + (x - last[k]) / 2.0
                        if not (last[k] <= thr and thr < x):
                            thr = last[k]
                        best_thr[k] = thr
                        best_left[k, 0] = la
                        best_left[k, 1] = lb
                        best_left[k, 2] = lw
            acc[k, 0] += stats[r, 0]
            acc[k, 1] += stats[r, 1]
            acc[k, 2] += stats[r, 2]
            last[k] = x
    return best_gain, best_feat, best_thr, best_left


def grow_tree(
    X: np.ndarray,
    stat_a: np.ndarray,
    stat_b: np.ndarray,
    weight: np.ndarray,
    *,
    criterion: str = "gini",
    columns: SortedColumns | None = None,
    max_depth: int | None = None,
    min_samples_leaf: float = 1.0,
    min_child_weight: float = 0.0,
    reg_lambda: float = 1.0,
    gamma: float = 0.0,
    max_features: int | None = None,
    rng: np.random.Generator | None = None,
) -> Tree:
    """Grow one tree.

    For ``criterion="gini"`` the row statistics are ``stat_a = weight`` and
    ``stat_b = weight * y``; leaves hold the weighted positive fraction.
    For ``criterion="newton"`` they are gradients and hessians; leaves hold
    ``-G / (H + reg_lambda)``.  ``weight`` counts how often a row is used
    (zero drops it) and is what ``min_samples_leaf`` applies to.
    ``max_features`` draws that many candidate features per node.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if columns is None:
        columns = presort(X)
    if criterion not in ("gini", "newton"):
        raise ValueError(f"unknown criterion {criterion!r}")
    newton = criterion == "newton"
    stat_a = np.asarray(stat_a, dtype=float)
    stat_b = np.asarray(stat_b, dtype=float)
    weight = np.asarray(weight, dtype=float)
    stats = np.column_stack([stat_a, stat_b, weight])
    depth_cap = np.inf if max_depth is None else max_depth
    subsample_features = max_features is not None and max_features < d
    if subsample_features and rng is None:
        raise ValueError("max_features needs an rng")

    def leaf_value(a, b):
        if newton:
            return -a / (b + reg_lambda)
        return b / a if a > 0 else 0.0

    def splittable(a, b, w, depth):
        if depth >= depth_cap or w < 2 * min_samples_leaf:
            return False
        if newton:
            return b >= 2 * min_child_weight
        return 0.0 < b < a

    nodes = _Nodes()
    in_tree = weight > 0
    root_a, root_b, root_w = stat_a[in_tree].sum(), stat_b[in_tree].sum(), weight[in_tree].sum()
    root = nodes.add(leaf_value(root_a, root_b), root_w, np.nan if newton else root_b)
    if not splittable(root_a, root_b, root_w, 0):
        return nodes.freeze()

    # open_nodes[k] is the tree node id of the k-th node split at this level;
    # local[row] is that k, or K for rows no longer being split
    open_nodes = [root]
    totals = [(root_a, root_b, root_w)]
    local = np.where(in_tree, 0, 1).astype(np.int32)
    if not in_tree.all():
        columns = columns.compact(in_tree)
    depth = 0
    while open_nodes:
        K = len(open_nodes)
        tot = np.array(totals, dtype=float).reshape(K, 3)
        if subsample_features:
            picks = np.argsort(rng.random((K, d)), axis=1)[:, :max_features]
            allowed = np.zeros((K, d), dtype=bool)
            np.put_along_axis(allowed, picks, True, axis=1)
        else:
            allowed = np.ones((K, d), dtype=bool)
        gains, feats, thrs, lefts = _scan_level(
            columns.order, columns.values, local, K, stats, allowed, tot, newton,
            float(reg_lambda), float(gamma), float(min_samples_leaf), float(min_child_weight))

        next_open: list[int] = []
        next_totals = []
        split_feat = np.full(K, -1, dtype=np.int64)
        split_thr = np.zeros(K)
        slots = np.full((K, 2), -1, dtype=np.int64)
        for k, node in enumerate(open_nodes):
            g = gains[k]
            if not np.isfinite(g) or g <= _GAIN_EPS * (1.0 if newton else max(tot[k, 0], 1.0)):
                continue
            f = int(feats[k])
            la, lb, lw = lefts[k]
            ra, rb, rw = tot[k, 0] - la, tot[k, 1] - lb, tot[k, 2] - lw
            left = nodes.add(leaf_value(la, lb), lw, np.nan if newton else lb)
            right = nodes.add(leaf_value(ra, rb), rw, np.nan if newton else rb)
            nodes.feature[node] = f
            nodes.threshold[node] = float(thrs[k])
            nodes.left[node] = left
            nodes.right[node] = right
            split_feat[k] = f
            split_thr[k] = thrs[k]
            for side, (child, a, b, w) in enumerate(((left, la, lb, lw), (right, ra, rb, rw))):
                if splittable(a, b, w, depth + 1):
                    slots[k, side] = len(next_open)
                    next_open.append(child)
                    next_totals.append((a, b, w))

        if not next_open:
            break
        K_next = len(next_open)
        slots[slots < 0] = K_next
        members = np.flatnonzero(local < K)
        k_of = local[members]
        f_of = split_feat[k_of]
        next_local = np.full(n, K_next, dtype=np.int32)
        was_split = f_of >= 0
        rows_split = members[was_split]
        k_split = k_of[was_split]
        go_left = X[rows_split, f_of[was_split]] <= split_thr[k_split]
        next_local[rows_split] = np.where(go_left, slots[k_split, 0], slots[k_split, 1])
        local = next_local
        still_open = local < K_next
        if still_open.sum() < 0.5 * columns.order.shape[1]:
            columns = columns.compact(still_open)
        open_nodes = next_open
        totals = next_totals
        depth += 1
    return nodes.freeze()


def export_dot(tree: Tree, feature_names=None, value_label: str = "value") -> str:
    """Graphviz DOT text for one tree; node ids are breadth-first."""
    names = feature_names or [f"x{j}" for j in range(int(tree.feature.max(initial=-1)) + 1)]
    lines = ["digraph Tree {", 'node [shape=box, fontname="helvetica"] ;',
             'edge [fontname="helvetica"] ;']
    order = [0]
    ids = {0: 0}
    i = 0
    while i < len(order):
        node = order[i]
        if tree.left[node] >= 0:
            for child in (tree.left[node], tree.right[node]):
                ids[int(child)] = len(order)
                order.append(int(child))
        i += 1
    for node in order:
        parts = []
        if tree.left[node] >= 0:
            parts.append(f"{names[tree.feature[node]]} <= {tree.threshold[node]:.6g}")
        parts.append(f"samples = {tree.cover[node]:.6g}")
        if np.isnan(tree.positives[node]):
            parts.append(f"{value_label} = {tree.value[node]:.6g}")
        else:
            neg = tree.cover[node] - tree.positives[node]
            parts.append(f"value = [{neg:.6g}, {tree.positives[node]:.6g}]")
        label = "\\n".join(parts)
        lines.append(f'{ids[node]} [label="{label}"] ;')
    for node in order:
        if tree.left[node] >= 0:
            lines.append(f'{ids[node]} -> {ids[int(tree.left[node])]} [headlabel="True"] ;')
            lines.append(f'{ids[node]} -> {ids[int(tree.right[node])]} [headlabel="False"] ;')
    lines.append("}")
    return "\n".join(lines) + "\n"
