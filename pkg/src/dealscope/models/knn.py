from __future__ import annotations

import numpy as np

from dealscope.models.base import Classifier, Standardizer, check_training_data


class KNearestNeighbors(Classifier):
    """Fraction of positive labels among the ``k`` nearest training rows.

    Distances are Euclidean on features standardised with training
    statistics; equal distances are resolved in favour of the earlier row.
    """

    kind = "KNN"

    def __init__(self, k=5, chunk=1024):
        self.k = k
        self.chunk = chunk
        self.scaler: Standardizer | None = None
        self.Z: np.ndarray | None = None
        self.y: np.ndarray | None = None

    def params(self):
        return {"k": self.k}

    def fit(self, X, y, feature_names=None):
        X, y = check_training_data(X, y)
        if self.k > len(y):
            raise ValueError(f"k={self.k} exceeds the {len(y)} training rows")
        self.scaler = Standardizer.fit(X)
        self.Z = self.scaler.transform(X)
        self.y = y
        return self

    def neighbors(self, X) -> np.ndarray:
        Q = self.scaler.transform(X)
        sq = (self.Z * self.Z).sum(axis=1)
        out = np.empty((len(Q), self.k), dtype=np.int64)
        for start in range(0, len(Q), self.chunk):
            block = Q[start:start + self.chunk]
            d2 = (block * block).sum(axis=1)[:, None] + sq[None, :] - 2.0 * block @ self.Z.T
            np.maximum(d2, 0.0, out=d2)
            out[start:start + len(block)] = np.argsort(d2, axis=1, kind="stable")[:, :self.k]
        return out

    def raw_score(self, X):
        return self.y[self.neighbors(X)].mean(axis=1)

    def predict_proba(self, X):
        return self.raw_score(X)

    def state(self):
        return {"scaler": self.scaler.to_dict(), "Z": self.Z.tolist(), "y": self.y.tolist()}

    def load_state(self, state):
        self.scaler = Standardizer.from_dict(state["scaler"])
        self.Z = np.asarray(state["Z"], dtype=float)
        self.y = np.asarray(state["y"], dtype=float)
