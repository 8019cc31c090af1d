"""Run configuration: one YAML key tree, defaults below, flags override keys.

The config path comes from ``--config`` or, failing that, the
``DEALSCOPE_CONFIG`` environment variable.  Unknown keys are rejected with
their dotted path so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import copy
import os
from pathlib import Path

import yaml

ENV_VAR = "DEALSCOPE_CONFIG"


class ConfigError(ValueError):
    """Schema violation; the message names the offending key."""


# Subtrees whose keys are validated by the component that consumes them.
_FREE_FORM = {"synth", "models"}

DEFAULTS: dict = {
    "seed": 0,
    "threads": 1,
    "out": "dealscope-out",
    "data": {"dir": None},             # directory holding the four source CSVs
    "inputs": {                        # upstream outputs for stages run on their own
        "matches": None,
        "dataset": None,
        "artifact": None,
        "holdout": None,
        "background": None,
        "grid": None,
    },
    "synth": {},
    "linkage": {"hi": 0.90, "lo": 0.70},
    "features": {
        "snapshot_date": None,          # ISO date; default latest period end in the data
        "window_start": "auto",         # ISO date, "auto" (day after snapshot) or null (any deal)
        "trim_fraction": 0.025,
        "imputation": "median",
        "missing_indicators": True,
    },
    "sampling": {"kind": "smote", "k_neighbors": 5, "target_ratio": 1.0, "standardize": True},
    "models": {},
    "train": {"model": "XGB", "features": "all"},
    "stats": {"dataset": True},
    "evaluation": {
        "models": ["LR", "RF", "XGB", "SVM", "KNN", "DT"],
        "samplers": ["undersample", "oversample", "smote"],
        "feature_sets": ["financial", "director", "all"],
        "k": 10,
        "holdout_fraction": 0.2,
        "threshold": 0.5,
        "cross_validate": True,
        "repeats": 1,
    },
    "explain": {
        "perturbation": "path",
        "interactions": True,
        "interaction_rows": 500,
        "background_rows": 256,
    },
    "report": {"figures": True},
}


def _merge(base: dict, update: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in (update or {}).items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if key in _FREE_FORM and not prefix:
            if value is not None and not isinstance(value, dict):
                raise ConfigError(f"config key {path!r} must be a mapping")
            out[key] = copy.deepcopy(value or {})
        elif isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path!r} must be a mapping")
            out[key] = _merge(base[key], value, path + ".")
        else:
            out[key] = value
    return out


class Config:
    def __init__(self, tree: dict | None = None, source: str | None = None):
        self.tree = _merge(DEFAULTS, tree or {})
        self.source = source
        self._check_types()

    @classmethod
    def load(cls, path=None) -> "Config":
        path = path or os.environ.get(ENV_VAR)
        if not path:
            return cls()
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file not found: {p}")
        try:
            tree = yaml.safe_load(p.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {p} is not valid YAML: {exc}") from None
        if tree is not None and not isinstance(tree, dict):
            raise ConfigError(f"config file {p} must hold a mapping at the top level")
        return cls(tree, str(p))

    def get(self, dotted: str):
        node = self.tree
        for part in dotted.split("."):
            node = node[part]
        return node

    def set(self, dotted: str, value) -> None:
        """Override one key (flags use this); unknown keys are rejected."""
        parts = dotted.split(".")
        node, ref = self.tree, DEFAULTS
        for part in parts[:-1]:
            if part not in ref:
                raise ConfigError(f"unknown config key {dotted!r}")
            node, ref = node[part], ref[part]
        if parts[-1] not in ref and parts[0] not in _FREE_FORM:
            raise ConfigError(f"unknown config key {dotted!r}")
        node[parts[-1]] = value
        self._check_types()

    def override(self, pairs: dict) -> "Config":
        for key, value in pairs.items():
            if value is not None:
                self.set(key, value)
        return self

    def _check_types(self) -> None:
        t = self.tree
        _expect(isinstance(t["seed"], int) and t["seed"] >= 0, "seed", "a nonnegative integer")
        _expect(isinstance(t["threads"], int) and t["threads"] >= 1, "threads", "a positive integer")
        lk = t["linkage"]
        for key in ("hi", "lo"):
            _expect(isinstance(lk[key], (int, float)) and 0 <= lk[key] <= 1, f"linkage.{key}",
                    "a number in [0, 1]")
        _expect(lk["lo"] <= lk["hi"], "linkage.lo", "at most linkage.hi")
        ev = t["evaluation"]
        _expect(isinstance(ev["k"], int) and ev["k"] >= 2, "evaluation.k", "an integer >= 2")
        _expect(isinstance(ev["repeats"], int) and ev["repeats"] >= 1, "evaluation.repeats",
                "a positive integer")
        _expect(isinstance(ev["holdout_fraction"], (int, float)) and 0 < ev["holdout_fraction"] < 1,
                "evaluation.holdout_fraction", "a number in (0, 1)")
        for key in ("models", "samplers", "feature_sets"):
            _expect(isinstance(ev[key], list) and ev[key], f"evaluation.{key}", "a nonempty list")
        _expect(t["explain"]["perturbation"] in ("path", "interventional"), "explain.perturbation",
                "'path' or 'interventional'")
        _expect(t["features"]["imputation"] in ("median", "zero"), "features.imputation",
                "'median' or 'zero'")

    def snapshot(self) -> dict:
        return copy.deepcopy(self.tree)

    def dump(self) -> str:
        return yaml.safe_dump(self.tree, sort_keys=True)


def _expect(ok: bool, key: str, what: str) -> None:
    if not ok:
        raise ConfigError(f"config key {key!r} must be {what}")
