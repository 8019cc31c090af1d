"""Class rebalancing for training data: undersampling, oversampling, SMOTE.

The balance target ``target_ratio`` is the minority/majority count ratio
after sampling (1.0 means equal classes).  Samplers only ever see the
training rows they are handed; rows produced by SMOTE remember the two
source rows they were interpolated from.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from dealscope.dataset import Dataset

log = logging.getLogger(__name__)

KINDS = ("undersample", "oversample", "smote", "none")


@dataclass(frozen=True)
class SamplerSpec:
    kind: str = "smote"
    k_neighbors: int = 5
    target_ratio: float = 1.0
    seed: int = 0
    standardize: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown sampler {self.kind!r}; expected one of {KINDS}")
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        if not 0.0 < self.target_ratio <= 1.0:
            raise ValueError("target_ratio must be in (0, 1]")


def _classes(train: Dataset):
    pos = np.flatnonzero(train.y == 1)
    neg = np.flatnonzero(train.y == 0)
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("sampling needs both classes in the training data")
    if len(pos) <= len(neg):
        return pos, neg
    return neg, pos


def undersample(train: Dataset, spec: SamplerSpec) -> Dataset:
    minority, majority = _classes(train)
    target = min(len(majority), max(1, int(round(len(minority) / spec.target_ratio))))
    rng = np.random.default_rng(spec.seed)
    chosen = np.sort(rng.choice(majority, size=target, replace=False))
    return train.take(np.sort(np.concatenate([minority, chosen])))


def _minority_target(n_minority: int, n_majority: int, ratio: float) -> int:
    return max(n_minority, int(round(ratio * n_majority)))


def oversample(train: Dataset, spec: SamplerSpec) -> Dataset:
    minority, majority = _classes(train)
    extra = _minority_target(len(minority), len(majority), spec.target_ratio) - len(minority)
    rng = np.random.default_rng(spec.seed)
    copies = np.sort(rng.choice(minority, size=extra, replace=True))
    return train.take(np.concatenate([np.arange(train.n_rows), copies]))


def _neighbors(Z: np.ndarray, k: int) -> np.ndarray:
    """k nearest other points per row, distance ties broken by index."""
    n = len(Z)
    out = np.empty((n, k), dtype=np.int64)
    sq = (Z * Z).sum(axis=1)
    for start in range(0, n, 512):
        block = slice(start, min(start + 512, n))
        d2 = sq[block, None] + sq[None, :] - 2.0 * Z[block] @ Z.T
        np.maximum(d2, 0.0, out=d2)
        rows = np.arange(block.start, block.stop)
        d2[rows - start, rows] = np.inf
        # stable sort keeps lower indices first among equal distances
        out[block] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def smote(train: Dataset, spec: SamplerSpec) -> Dataset:
    """Interpolate new minority rows between minority nearest neighbours.

    Neighbour search runs on features z-scored with the training
    statistics; the new point ``x_i + lam * (x_nn - x_i)`` is formed in the
    original units (the two are related by an affine map, so the point lies
    on the same segment either way).
    """
    minority, majority = _classes(train)
    if len(minority) == 1:
        warnings.warn("SMOTE needs at least two minority rows; falling back to oversampling",
                      stacklevel=2)
        return oversample(train, spec)
    k = spec.k_neighbors
    if len(minority) <= k:
        warnings.warn(f"only {len(minority)} minority rows; reducing k_neighbors from {k} "
                      f"to {len(minority) - 1}", stacklevel=2)
        k = len(minority) - 1

    extra = _minority_target(len(minority), len(majority), spec.target_ratio) - len(minority)
    X = train.X
    if np.isnan(X).any():
        raise ValueError("SMOTE needs complete feature vectors; impute first")
    Xm = X[minority]
    if spec.standardize:
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        std[std == 0] = 1.0
        Z = (Xm - mean) / std
    else:
        Z = Xm
    nn = _neighbors(Z, k)

    rng = np.random.default_rng(spec.seed)
    base = rng.integers(0, len(minority), size=extra)
    pick = rng.integers(0, k, size=extra)
    lam = rng.random(extra)
    # canonical order: by parent row, then draw order
    order = np.lexsort((np.arange(extra), base))
    base, pick, lam = base[order], pick[order], lam[order]
    partner = nn[base, pick]
    synth = Xm[base] + lam[:, None] * (Xm[partner] - Xm[base])

    n_new = extra
    label = train.y[minority[0]]
    parents = np.column_stack([train.row_ids[minority[base]], train.row_ids[minority[partner]]])
    out = Dataset(
        np.vstack([X, synth]),
        np.concatenate([train.y, np.full(n_new, label, dtype=np.int8)]),
        list(train.feature_names),
        list(train.groups),
        np.concatenate([train.ids, np.array([f"smote:{i}" for i in range(n_new)], dtype=object)]),
        np.concatenate([train.row_ids, np.full(n_new, -1, dtype=np.int64)]),
        np.vstack([train.parents, parents]),
        dict(train.meta),
    )
    out.meta["smote_lambda"] = lam
    out.meta["smote_k"] = k
    return out


def apply_sampler(train: Dataset, spec: SamplerSpec) -> Dataset:
    if spec.kind == "undersample":
        return undersample(train, spec)
    if spec.kind == "oversample":
        return oversample(train, spec)
    if spec.kind == "smote":
        return smote(train, spec)
    return train


def segment_distance(point: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance from ``point`` to the segment ``[a, b]``."""
    seg = b - a
    denom = float(seg @ seg)
    t = 0.0 if denom == 0 else float(np.clip((point - a) @ seg / denom, 0.0, 1.0))
    return float(np.linalg.norm(point - (a + t * seg)))
