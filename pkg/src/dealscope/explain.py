"""SHAP attributions for fitted models.

Tree ensembles are explained leaf by leaf.  A leaf is reached when every
feature ``j`` on its path falls in an interval ``(lo_j, hi_j]``; the leaf's
contribution to a coalition value is

    v * prod_{j in S} o_j * prod_{j in U \\ S} z_j

where ``U`` is the set of path features, ``o_j`` says whether the explained
row satisfies feature ``j``'s interval and ``z_j`` is what an absent
feature contributes: the fraction of training cover that follows the path
("path" perturbation) or whether a background row satisfies the interval
("interventional").  The Shapley value of such a product game has a closed
form in the coefficients of ``prod_{j != i} (z_j + o_j t)``, so every leaf
costs O(|U|^2) per explained row.

``shap_exact`` enumerates all coalitions for any model and is the oracle
the tree algorithms are tested against.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from numba import njit

from dealscope.models import ModelArtifact
from dealscope.models.tree import Tree

MAX_EXACT_FEATURES = 15
MAX_INTERACTION_FEATURES = 64
PERTURBATIONS = ("path", "interventional")


@dataclass
class ShapVector:
    base_value: float
    phi: np.ndarray
    instance: int | str | None = None

    @property
    def output(self) -> float:
        return float(self.base_value + self.phi.sum())


@dataclass
class ShapValues:
    """Attributions for a batch of rows, in raw-score units."""

    base_value: float
    phi: np.ndarray            # (n, d)
    feature_names: list[str]
    instances: list | None = None

    def vector(self, i: int) -> ShapVector:
        ref = None if self.instances is None else self.instances[i]
        return ShapVector(self.base_value, self.phi[i], ref)

    def vectors(self) -> list[ShapVector]:
        return [self.vector(i) for i in range(len(self.phi))]


@dataclass
class InteractionValues:
    base_value: float
    phi: np.ndarray            # (n, d, d), symmetric per row, main effects on the diagonal
    feature_names: list[str]

    def main_effects(self) -> np.ndarray:
        return np.einsum("nii->ni", self.phi)


# --------------------------------------------------------------------------
# Leaf tables


@dataclass
class LeafTable:
    """Every leaf of an ensemble as (value, path features, intervals, cover fractions)."""

    value: np.ndarray    # (L,)
    size: np.ndarray     # (L,) number of distinct path features
    feature: np.ndarray  # (L, D)
    lo: np.ndarray       # (L, D)
    hi: np.ndarray       # (L, D)
    zfrac: np.ndarray    # (L, D)
    offset: float        # constant added to the ensemble output
    n_features: int

    @property
    def depth(self) -> int:
        return self.feature.shape[1]


def _tree_leaves(tree: Tree, scale: float):
    out = []
    stack = [(0, {}, 1.0)]
    while stack:
        node, path, _ = stack.pop()
        if tree.left[node] < 0:
            out.append((tree.value[node] * scale, path))
            continue
        f = int(tree.feature[node])
        thr = float(tree.threshold[node])
        for child, go_left in ((tree.left[node], True), (tree.right[node], False)):
            lo, hi, z = path.get(f, (-np.inf, np.inf, 1.0))
            if go_left:
                hi = min(hi, thr)
            else:
                lo = max(lo, thr)
            frac = tree.cover[child] / tree.cover[node] if tree.cover[node] > 0 else 0.0
            new = dict(path)
            new[f] = (lo, hi, z * frac)
            stack.append((int(child), new, 0.0))
    return out


def leaf_table(artifact: ModelArtifact) -> LeafTable:
    if artifact.kind not in ("DT", "RF", "XGB"):
        raise ValueError(f"tree attributions need a DT, RF or XGB model, not {artifact.kind}")
    trees = artifact.model.trees
    scale = 1.0 / len(trees) if artifact.kind == "RF" else 1.0
    offset = float(artifact.model.base_score) if artifact.kind == "XGB" else 0.0
    leaves = []
    for tree in trees:
        leaves.extend(_tree_leaves(tree, scale))
    depth = max(1, max(len(p) for _, p in leaves))
    L = len(leaves)
    table = LeafTable(np.zeros(L), np.zeros(L, dtype=np.int64), np.zeros((L, depth), dtype=np.int64),
                      np.full((L, depth), -np.inf), np.full((L, depth), np.inf), np.ones((L, depth)),
                      offset, len(artifact.feature_names))
    for l, (value, path) in enumerate(leaves):
        table.value[l] = value
        table.size[l] = len(path)
        for k, f in enumerate(sorted(path)):
            lo, hi, z = path[f]
            table.feature[l, k] = f
            table.lo[l, k] = lo
            table.hi[l, k] = hi
            table.zfrac[l, k] = z
    return table


def _shapley_weights(m_max: int) -> np.ndarray:
    """``w[m, k] = k! (m - k - 1)! / m!`` for coalitions of size k among m players."""
    w = np.zeros((m_max + 1, m_max + 1))
    for m in range(1, m_max + 1):
        for k in range(m):
            w[m, k] = math.factorial(k) * math.factorial(m - k - 1) / math.factorial(m)
    return w


def _pair_weights(m_max: int) -> np.ndarray:
    """``w2[m, k] = k! (m - k - 2)! / (2 (m - 1)!)`` for the pairwise interaction index."""
    w = np.zeros((m_max + 1, m_max + 1))
    for m in range(2, m_max + 1):
        for k in range(m - 1):
            w[m, k] = math.factorial(k) * math.factorial(m - k - 2) / (2.0 * math.factorial(m - 1))
    return w


# --------------------------------------------------------------------------
# Kernels


@njit(cache=True, nogil=True)
def _poly(z, o, m, skip1, skip2, out):
    """Coefficients of prod_{j < m, j not in {skip1, skip2}} (z_j + o_j t)."""
    out[:] = 0.0
    out[0] = 1.0
    deg = 0
    for j in range(m):
        if j == skip1 or j == skip2:
            continue
        deg += 1
        for k in range(deg, 0, -1):
            out[k] = out[k] * z[j] + out[k - 1] * o[j]
        out[0] = out[0] * z[j]
    return deg


@njit(cache=True, nogil=True)
def _path_phi(X, value, size, feature, lo, hi, zfrac, w, phi):
    n = X.shape[0]
    L, D = feature.shape
    o = np.zeros(D)
    q = np.zeros(D + 1)
    for r in range(n):
        for l in range(L):
            m = size[l]
            if m == 0:
                continue
            for j in range(m):
                x = X[r, feature[l, j]]
                o[j] = 1.0 if (x > lo[l, j] and x <= hi[l, j]) else 0.0
            z = zfrac[l]
            for i in range(m):
                _poly(z, o, m, i, -1, q)
                s = 0.0
                for k in range(m):
                    s += w[m, k] * q[k]
                phi[r, feature[l, i]] += value[l] * (o[i] - z[i]) * s


@njit(cache=True, nogil=True)
def _path_interactions(X, value, size, feature, lo, hi, zfrac, w2, out):
    n = X.shape[0]
    L, D = feature.shape
    o = np.zeros(D)
    q = np.zeros(D + 1)
    for r in range(n):
        for l in range(L):
            m = size[l]
            if m < 2:
                continue
            for j in range(m):
                x = X[r, feature[l, j]]
                o[j] = 1.0 if (x > lo[l, j] and x <= hi[l, j]) else 0.0
            z = zfrac[l]
            for i in range(m):
                di = o[i] - z[i]
                if di == 0.0:
                    continue
                for j in range(i + 1, m):
                    dj = o[j] - z[j]
                    if dj == 0.0:
                        continue
                    _poly(z, o, m, i, j, q)
                    s = 0.0
                    for k in range(m - 1):
                        s += w2[m, k] * q[k]
                    c = value[l] * di * dj * s
                    fi = feature[l, i]
                    fj = feature[l, j]
                    out[r, fi, fj] += c
                    out[r, fj, fi] += c


@njit(cache=True, nogil=True)
def _popcount(v):
    c = 0
    while v:
        v &= v - 1
        c += 1
    return c


@njit(cache=True, nogil=True)
def _interventional_phi(X, value, size, feature, lo, hi, pat_start, pat_code, pat_count, coef_a,
                        coef_b, phi):
    """Background patterns per leaf are bit codes of which path intervals each background row meets.

    For one (row, background) pair every path feature is in one of four
    classes: o=1,z=0 (A), o=0,z=1 (B), both (C) or neither (N).  Any N
    feature zeroes every coalition value; otherwise only A and B features
    get credit, through precomputed sums over the free C features.
    """
    n = X.shape[0]
    L = feature.shape[0]
    for r in range(n):
        for l in range(L):
            m = size[l]
            if m == 0:
                continue
            full = (1 << m) - 1
            ocode = 0
            for j in range(m):
                x = X[r, feature[l, j]]
                if x > lo[l, j] and x <= hi[l, j]:
                    ocode |= 1 << j
            for p in range(pat_start[l], pat_start[l + 1]):
                zcode = pat_code[p]
                if (~ocode & ~zcode) & full:
                    continue
                a = ocode & ~zcode
                b = zcode & ~ocode
                if a == 0 and b == 0:
                    continue
                na = _popcount(a)
                nc = m - na - _popcount(b)
                wt = value[l] * pat_count[p]
                if a:
                    ca = coef_a[m, na, nc] * wt
                    for j in range(m):
                        if a >> j & 1:
                            phi[r, feature[l, j]] += ca
                if b:
                    cb = coef_b[m, na, nc] * wt
                    for j in range(m):
                        if b >> j & 1:
                            phi[r, feature[l, j]] -= cb


def _class_coefficients(m_max: int):
    """Sums of Shapley weights over the free features of the interventional kernel.

    ``coef_a[m, a, c] = sum_t C(c, t) w(a - 1 + t, m)`` and
    ``coef_b[m, a, c] = sum_t C(c, t) w(a + t, m)``.
    """
    w = _shapley_weights(m_max)
    coef_a = np.zeros((m_max + 1, m_max + 1, m_max + 1))
    coef_b = np.zeros_like(coef_a)
    for m in range(1, m_max + 1):
        for a in range(m + 1):
            for c in range(m - a + 1):
                for t in range(c + 1):
                    if a >= 1:
                        coef_a[m, a, c] += math.comb(c, t) * w[m, a - 1 + t]
                    if a + t <= m - 1:
                        coef_b[m, a, c] += math.comb(c, t) * w[m, a + t]
    return coef_a, coef_b


# --------------------------------------------------------------------------
# Public API


def _rows(artifact: ModelArtifact, X) -> np.ndarray:
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
    if X.shape[1] != len(artifact.feature_names):
        raise ValueError(f"expected {len(artifact.feature_names)} features, got {X.shape[1]}")
    if np.isnan(X).any():
        raise ValueError("rows to explain contain missing values; impute first")
    return X


def _path_base(table: LeafTable) -> float:
    return float(table.offset + np.sum(table.value * np.prod(table.zfrac, axis=1)))


def _background_patterns(table: LeafTable, background: np.ndarray):
    starts = [0]
    codes: list[int] = []
    counts: list[float] = []
    nb = len(background)
    for l in range(len(table.value)):
        m = int(table.size[l])
        if m:
            f = table.feature[l, :m]
            inside = (background[:, f] > table.lo[l, :m]) & (background[:, f] <= table.hi[l, :m])
            code = inside.astype(np.int64) @ (np.int64(1) << np.arange(m, dtype=np.int64))
            uniq, cnt = np.unique(code, return_counts=True)
            codes.extend(uniq.tolist())
            counts.extend((cnt / nb).tolist())
        starts.append(len(codes))
    return (np.asarray(starts, dtype=np.int64), np.asarray(codes, dtype=np.int64),
            np.asarray(counts, dtype=float))


def shap_tree(artifact: ModelArtifact, X, perturbation: str = "path", background=None,
              instances=None) -> ShapValues:
    """Exact SHAP values of a tree model's raw score for every row of ``X``.

    ``perturbation="path"`` fills absent features by following training
    cover down the tree; ``"interventional"`` averages over ``background``.
    """
    X = _rows(artifact, X)
    table = leaf_table(artifact)
    phi = np.zeros((len(X), table.n_features))
    if perturbation == "path":
        w = _shapley_weights(table.depth)
        _path_phi(X, table.value, table.size, table.feature, table.lo, table.hi, table.zfrac, w, phi)
        base = _path_base(table)
    elif perturbation == "interventional":
        if background is None or len(background) == 0:
            raise ValueError("interventional attributions need a nonempty background set")
        if table.depth > 62:
            raise ValueError("interventional attributions support paths of at most 62 features")
        B = _rows(artifact, background)
        starts, codes, counts = _background_patterns(table, B)
        coef_a, coef_b = _class_coefficients(table.depth)
        _interventional_phi(X, table.value, table.size, table.feature, table.lo, table.hi, starts,
                            codes, counts, coef_a, coef_b, phi)
        base = float(np.mean(artifact.raw_score(B)))
    else:
        raise ValueError(f"perturbation must be one of {PERTURBATIONS}")
    return ShapValues(base, phi, list(artifact.feature_names), instances)


def shap_interactions(artifact: ModelArtifact, X) -> InteractionValues:
    """Pairwise SHAP interaction values under path perturbation.

    Off-diagonal entries split each pair's interaction equally between
    ``(i, j)`` and ``(j, i)``; the diagonal holds what remains of each
    feature's attribution, so every row sums to its SHAP value.
    """
    X = _rows(artifact, X)
    if len(artifact.feature_names) > MAX_INTERACTION_FEATURES:
        raise ValueError(f"interaction values support at most {MAX_INTERACTION_FEATURES} features")
    table = leaf_table(artifact)
    d = table.n_features
    out = np.zeros((len(X), d, d))
    w2 = _pair_weights(max(table.depth, 2))
    _path_interactions(X, table.value, table.size, table.feature, table.lo, table.hi, table.zfrac,
                       w2, out)
    phi = shap_tree(artifact, X).phi
    idx = np.arange(d)
    out[:, idx, idx] = phi - out.sum(axis=2)
    return InteractionValues(_path_base(table), out, list(artifact.feature_names))


# --------------------------------------------------------------------------
# Brute-force oracle


def _tree_path_value(tree: Tree, x: np.ndarray, present: np.ndarray) -> float:
    """Expected tree output given the present features, averaging the rest by cover."""

    def visit(node):
        if tree.left[node] < 0:
            return tree.value[node]
        f = tree.feature[node]
        left, right = tree.left[node], tree.right[node]
        if present[f]:
            return visit(left if x[f] <= tree.threshold[node] else right)
        total = tree.cover[node]
        return (tree.cover[left] * visit(left) + tree.cover[right] * visit(right)) / total

    return float(visit(0))


BACKGROUND_ROWS = 256


def default_background(X, seed: int = 0, size: int = BACKGROUND_ROWS) -> np.ndarray:
    """Seeded subsample of ``size`` training rows (all rows when there are fewer)."""
    X = np.asarray(X, dtype=float)
    if len(X) <= size:
        return X.copy()
    idx = np.sort(np.random.default_rng(seed).choice(len(X), size=size, replace=False))
    return X[idx]


def _coalition_values(artifact: ModelArtifact, x: np.ndarray, background, value_function: str):
    d = len(x)
    masks = ((np.arange(1 << d)[:, None] >> np.arange(d)) & 1).astype(bool)
    if value_function == "tree_path":
        table = leaf_table(artifact)  # validates the model kind
        trees = artifact.model.trees
        scale = 1.0 / len(trees) if artifact.kind == "RF" else 1.0
        values = np.array([table.offset + scale * sum(_tree_path_value(t, x, mask) for t in trees)
                           for mask in masks])
        return masks, values
    if value_function != "interventional":
        raise ValueError("value_function must be 'interventional' or 'tree_path'")
    B = np.asarray(background, dtype=float)
    if B.ndim != 2 or len(B) == 0:
        raise ValueError("shap_exact needs a nonempty background set")
    values = np.empty(len(masks))
    chunk = max(1, 200_000 // len(B))
    for start in range(0, len(masks), chunk):
        block = masks[start:start + chunk]
        rows = np.where(block[:, None, :], x[None, None, :], B[None, :, :]).reshape(-1, d)
        values[start:start + len(block)] = artifact.raw_score(rows).reshape(len(block), len(B)).mean(axis=1)
    return masks, values


def shap_exact(artifact: ModelArtifact, x, background=None, value_function: str = "interventional",
               instance=None) -> ShapVector:
    """Shapley values by enumerating all ``2^d`` coalitions.

    ``value_function="interventional"`` replaces absent features by each
    background row and averages; ``"tree_path"`` uses the cover-weighted
    conditional expectation of tree models.
    """
    x = np.asarray(x, dtype=float).ravel()
    d = len(x)
    if d != len(artifact.feature_names):
        raise ValueError(f"expected {len(artifact.feature_names)} features, got {d}")
    if d > MAX_EXACT_FEATURES:
        raise ValueError(f"exact enumeration supports at most {MAX_EXACT_FEATURES} features; "
                         "use shap_tree for tree models")
    masks, values = _coalition_values(artifact, x, background, value_function)
    codes = masks @ (1 << np.arange(d))
    sizes = masks.sum(axis=1)
    weight = np.array([math.factorial(k) * math.factorial(d - k - 1) / math.factorial(d)
                       for k in range(d)])
    phi = np.zeros(d)
    for i in range(d):
        without = ~masks[:, i]
        S = codes[without]
        phi[i] = np.sum(weight[sizes[without]] * (values[S | (1 << i)] - values[S]))
    return ShapVector(float(values[0]), phi, instance)


def shap_interactions_exact(artifact: ModelArtifact, x, background=None,
                            value_function: str = "tree_path") -> np.ndarray:
    """Pairwise Shapley interaction index by enumeration, diagonal as in ``shap_interactions``."""
    x = np.asarray(x, dtype=float).ravel()
    d = len(x)
    if d > MAX_EXACT_FEATURES:
        raise ValueError(f"exact enumeration supports at most {MAX_EXACT_FEATURES} features")
    masks, values = _coalition_values(artifact, x, background, value_function)
    codes = masks @ (1 << np.arange(d))
    sizes = masks.sum(axis=1)
    out = np.zeros((d, d))
    for i, j in combinations(range(d), 2):
        free = ~masks[:, i] & ~masks[:, j]
        S = codes[free]
        k = sizes[free]
        wt = np.array([math.factorial(s) * math.factorial(d - s - 2) / (2 * math.factorial(d - 1))
                       for s in k])
        delta = values[S | (1 << i) | (1 << j)] - values[S | (1 << i)] - values[S | (1 << j)] + values[S]
        out[i, j] = out[j, i] = np.sum(wt * delta)
    phi = shap_exact(artifact, x, background, value_function).phi
    out[np.arange(d), np.arange(d)] = phi - out.sum(axis=1)
    return out


# --------------------------------------------------------------------------
# Aggregation and export


@dataclass
class Importance:
    feature: str
    mean_abs_phi: float
    rank: int


def global_importance(shap: ShapValues | list[ShapVector], feature_names=None) -> list[Importance]:
    """Features ranked by mean absolute attribution; ties keep input order."""
    if isinstance(shap, ShapValues):
        phi = shap.phi
        names = shap.feature_names
    else:
        if not shap:
            raise ValueError("global_importance needs at least one attribution vector")
        phi = np.vstack([v.phi for v in shap])
        names = feature_names or [f"x{j}" for j in range(phi.shape[1])]
    score = np.abs(phi).mean(axis=0)
    order = np.argsort(-score, kind="stable")
    return [Importance(names[j], float(score[j]), rank + 1) for rank, j in enumerate(order)]


def importance_json(ranking: list[Importance]) -> str:
    return json.dumps([{"rank": r.rank, "feature": r.feature, "mean_abs_phi": r.mean_abs_phi}
                       for r in ranking], indent=2)


def interaction_partner(interactions: InteractionValues) -> np.ndarray:
    """For each feature, the other feature with the largest mean |interaction|."""
    strength = np.abs(interactions.phi).mean(axis=0)
    np.fill_diagonal(strength, -1.0)
    return np.argmax(strength, axis=1)


def write_phi_csv(path, shap: ShapValues, ids) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(["company_id", "base_value"] + shap.feature_names)
        for i, ident in enumerate(ids):
            out.writerow([ident, repr(shap.base_value)] + [repr(float(v)) for v in shap.phi[i]])


def write_dependence_csv(path, X, shap: ShapValues, partner=None) -> None:
    """Long-format (feature, value, phi, partner, partner value) rows for dependence plots."""
    X = np.asarray(X, dtype=float)
    names = shap.feature_names
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(["row", "feature", "value", "phi", "partner", "partner_value"])
        for j, name in enumerate(names):
            p = None if partner is None else int(partner[j])
            for i in range(len(X)):
                out.writerow([i, name, repr(float(X[i, j])), repr(float(shap.phi[i, j])),
                              "" if p is None else names[p],
                              "" if p is None else repr(float(X[i, p]))])


def write_interactions_csv(path, interactions: InteractionValues, ids) -> None:
    """One row per (instance, i, j) with i <= j; the matrix is symmetric."""
    names = interactions.feature_names
    d = len(names)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(["company_id", "feature_i", "feature_j", "value"])
        for r, ident in enumerate(ids):
            for i in range(d):
                for j in range(i, d):
                    v = interactions.phi[r, i, j]
                    if v != 0.0:
                        out.writerow([ident, names[i], names[j], repr(float(v))])
