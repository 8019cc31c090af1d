"""Numeric design matrix shared by sampling, models and evaluation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FEATURE_SETS = ("financial", "director", "all")


@dataclass
class Dataset:
    """Rows of features plus a binary label.

    ``row_ids`` index rows of the dataset a sample was drawn from (``-1``
    for synthetic rows); ``parents`` holds the two source rows a synthetic
    point was interpolated between (``-1`` otherwise).  Missing values are
    NaN until an imputer has been applied.
    """

    X: np.ndarray
    y: np.ndarray
    feature_names: list[str]
    groups: list[str]
    ids: np.ndarray
    row_ids: np.ndarray | None = None
    parents: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=np.int8)
        self.ids = np.asarray(self.ids, dtype=object)
        n = self.X.shape[0]
        if self.X.ndim != 2 or self.y.shape != (n,) or self.ids.shape != (n,):
            raise ValueError("X, y and ids must have matching row counts")
        if len(self.feature_names) != self.X.shape[1] or len(self.groups) != self.X.shape[1]:
            raise ValueError("feature_names/groups must match the number of columns")
        if self.row_ids is None:
            self.row_ids = np.arange(n)
        if self.parents is None:
            self.parents = np.full((n, 2), -1, dtype=np.int64)
        self.row_ids = np.asarray(self.row_ids, dtype=np.int64)
        self.parents = np.asarray(self.parents, dtype=np.int64).reshape(n, 2)

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def n_positive(self) -> int:
        return int(self.y.sum())

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.y[idx], list(self.feature_names), list(self.groups),
                       self.ids[idx], self.row_ids[idx], self.parents[idx], dict(self.meta))

    def columns(self, feature_set: str) -> list[int]:
        if feature_set == "all":
            return list(range(self.n_features))
        if feature_set not in FEATURE_SETS:
            raise ValueError(f"unknown feature set {feature_set!r}; expected one of {FEATURE_SETS}")
        return [j for j, g in enumerate(self.groups) if g == feature_set]

    def select(self, feature_set: str) -> "Dataset":
        cols = self.columns(feature_set)
        return Dataset(self.X[:, cols], self.y, [self.feature_names[j] for j in cols],
                       [self.groups[j] for j in cols], self.ids, self.row_ids, self.parents,
                       dict(self.meta))

    def with_X(self, X, feature_names=None, groups=None) -> "Dataset":
        return Dataset(X, self.y, list(feature_names or self.feature_names),
                       list(groups or self.groups), self.ids, self.row_ids, self.parents,
                       dict(self.meta))

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["company_id", *self.feature_names, "label"])
            for cid, row, label in zip(self.ids, self.X, self.y):
                writer.writerow([cid, *("" if np.isnan(v) else repr(float(v)) for v in row), int(label)])

    @classmethod
    def from_csv(cls, path, groups: dict[str, str] | None = None) -> "Dataset":
        """Read a CSV written by :meth:`to_csv`.

        ``groups`` maps column name to feature group; without it the group
        is looked up in the built-in feature table.
        """
        from dealscope.features import group_of

        with Path(path).open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[0] != "company_id" or header[-1] != "label":
                raise ValueError(f"{path}: expected company_id,...,label header")
            names = header[1:-1]
            ids, rows, labels = [], [], []
            for rec in reader:
                ids.append(rec[0])
                rows.append([float(v) if v != "" else np.nan for v in rec[1:-1]])
                labels.append(int(rec[-1]))
        groups = groups or {}
        X = np.array(rows, dtype=float).reshape(len(rows), len(names))
        return cls(X, np.array(labels), names, [groups.get(n) or group_of(n) for n in names],
                   np.array(ids, dtype=object))
