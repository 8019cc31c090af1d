"""Six binary classifiers behind one fit / predict-probability interface.

``fit(spec, train)`` returns a ``ModelArtifact``: the fitted model plus the
feature schema it was trained on.  Artifacts serialise to versioned JSON
(see ``docs/schemas.md``) and round-trip exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from dealscope.dataset import Dataset
from dealscope.models.base import Classifier, sigmoid
from dealscope.models.ensembles import DecisionTree, GradientBoosting, RandomForest
from dealscope.models.knn import KNearestNeighbors
from dealscope.models.linear import LinearSVM, LogisticRegression, LRFit
from dealscope.models.tree import Tree, export_dot

SCHEMA_VERSION = 1
KINDS = ("LR", "DT", "RF", "KNN", "SVM", "XGB")

DEFAULTS: dict[str, dict] = {
    "LR": {"l2": 1e-4, "max_epochs": 500, "tol": 1e-8, "solver": "gd"},
    "DT": {"max_depth": 6, "min_samples_leaf": 5},
    "RF": {"n_estimators": 100, "max_depth": None, "min_samples_leaf": 1, "max_features": "sqrt",
           "bootstrap": True},
    "KNN": {"k": 5},
    "SVM": {"lam": 1e-4, "epochs": 20, "batch_size": 16},
    "XGB": {"n_estimators": 100, "max_depth": 6, "learning_rate": 0.1, "reg_lambda": 1.0,
            "gamma": 0.0, "min_child_weight": 1.0},
}

_CLASSES = {
    "LR": LogisticRegression,
    "DT": DecisionTree,
    "RF": RandomForest,
    "KNN": KNearestNeighbors,
    "SVM": LinearSVM,
    "XGB": GradientBoosting,
}
_SEEDED = {"RF", "SVM"}


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        kind = self.kind.upper()
        if kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        unknown = set(self.hyperparameters) - set(DEFAULTS[kind])
        if unknown:
            raise ValueError(f"unknown {kind} hyperparameters: {sorted(unknown)}")

    def resolved(self) -> dict:
        return {**DEFAULTS[self.kind], **self.hyperparameters}

    def build(self, threads: int = 1) -> Classifier:
        params = self.resolved()
        if self.kind in _SEEDED:
            params["seed"] = self.seed
        if self.kind == "RF":
            params["threads"] = threads
        return _CLASSES[self.kind](**params)


@dataclass
class ModelArtifact:
    spec: ModelSpec
    feature_names: list[str]
    model: Classifier

    @property
    def kind(self) -> str:
        return self.spec.kind

    @property
    def converged(self) -> bool:
        return bool(getattr(self.model, "converged", True))

    @property
    def lr_fit(self) -> LRFit | None:
        return getattr(self.model, "inference", None)

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != len(self.feature_names):
            raise ValueError(f"feature dimension {X.shape[1]} does not match the "
                             f"{len(self.feature_names)} columns the model was trained on")
        if np.isnan(X).any():
            raise ValueError("feature vectors contain missing values; impute first")
        return X

    def predict_proba(self, X) -> np.ndarray:
        return np.clip(self.model.predict_proba(self._check(X)), 0.0, 1.0)

    def raw_score(self, X) -> np.ndarray:
        return self.model.raw_score(self._check(X))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.spec.kind,
            "hyperparameters": self.spec.resolved(),
            "seed": self.spec.seed,
            "feature_names": list(self.feature_names),
            "converged": self.converged,
            "state": self.model.state(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, allow_nan=True)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelArtifact":
        version = payload.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported artifact schema version {version!r}")
        spec = ModelSpec(payload["kind"], payload["hyperparameters"], payload["seed"])
        model = spec.build()
        model.load_state(payload["state"])
        model.converged = payload.get("converged", True)
        return cls(spec, list(payload["feature_names"]), model)

    @classmethod
    def load(cls, path) -> "ModelArtifact":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def fit(spec: ModelSpec, train: Dataset, threads: int = 1) -> ModelArtifact:
    if train.n_positive == 0 or train.n_positive == train.n_rows:
        if spec.kind != "XGB":
            raise ValueError("training data must contain both classes")
    model = spec.build(threads)
    model.fit(train.X, train.y, feature_names=train.feature_names)
    return ModelArtifact(spec, list(train.feature_names), model)


def predict_proba(artifact: ModelArtifact, X) -> np.ndarray:
    return artifact.predict_proba(X)


def export_tree(artifact: ModelArtifact, index: int = 0) -> str:
    """DOT text for the DT tree, or tree ``index`` of an RF or XGB ensemble."""
    if artifact.kind not in ("DT", "RF", "XGB"):
        raise ValueError(f"{artifact.kind} artifacts contain no trees")
    trees = artifact.model.trees
    if not 0 <= index < len(trees):
        raise IndexError(f"tree index {index} out of range for {len(trees)} trees")
    label = "raw score" if artifact.kind == "XGB" else "P(deal)"
    return export_dot(trees[index], artifact.feature_names, label)


__all__ = [
    "DEFAULTS", "KINDS", "SCHEMA_VERSION", "DecisionTree", "GradientBoosting", "KNearestNeighbors",
    "LRFit", "LinearSVM", "LogisticRegression", "ModelArtifact", "ModelSpec", "RandomForest", "Tree",
    "export_tree", "fit", "predict_proba", "sigmoid",
]
