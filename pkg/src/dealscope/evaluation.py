"""Metrics, stratified splits and the balanced-train / imbalanced-hold-out protocol.

The protocol splits off a stratified hold-out set first, then runs
stratified k-fold cross-validation on the rest.  Imputation is fitted and
the sampler applied on each training fold only; every model is finally
refit on all cross-validation rows and scored on the untouched hold-out.
"""

from __future__ import annotations

import csv
import io
import logging
import time
import warnings
from dataclasses import asdict, dataclass, field
from datetime import date

import numpy as np
from scipy.stats import rankdata

from dealscope.dataset import FEATURE_SETS, Dataset
from dealscope.features import ImputationPolicy, Imputer
from dealscope.models import KINDS, ModelSpec, fit
from dealscope.sampling import SamplerSpec, apply_sampler
from dealscope.seeding import derive_seed

log = logging.getLogger(__name__)

METRICS = ("accuracy", "precision", "f1", "roc_auc", "recall")
SPLITS = ("train", "test", "holdout")
MODEL_ORDER = ("LR", "RF", "XGB", "SVM", "KNN", "DT")
SAMPLER_ORDER = ("undersample", "oversample", "smote")


# -- metrics ---------------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @classmethod
    def from_predictions(cls, predicted, labels) -> "ConfusionCounts":
        p = np.asarray(predicted, dtype=bool)
        t = np.asarray(labels, dtype=bool)
        return cls(int(np.sum(p & t)), int(np.sum(p & ~t)), int(np.sum(~p & t)), int(np.sum(~p & ~t)))

    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    def f1(self) -> float:
        p, r = self.precision(), self.recall()
        return 2 * p * r / (p + r) if p + r else 0.0

    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.n if self.n else 0.0


@dataclass
class MetricRow:
    accuracy: float
    precision: float
    f1: float
    roc_auc: float
    recall: float
    split: str = "holdout"
    auc_defined: bool = True

    def values(self) -> dict:
        return {m: getattr(self, m) for m in METRICS}


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative, ties counted half.

    Returns NaN when either class is absent.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(scores)  # average ranks give ties half credit
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def metrics(scores, labels, threshold: float = 0.5, split: str = "holdout") -> MetricRow:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.size == 0 or scores.shape != labels.shape:
        raise ValueError("metrics need equally long, nonempty score and label vectors")
    counts = ConfusionCounts.from_predictions(scores >= threshold, labels)
    auc = roc_auc(scores, labels)
    defined = bool(np.isfinite(auc))
    if not defined:
        warnings.warn("ROC AUC is undefined for a single-class label set", stacklevel=2)
    return MetricRow(counts.accuracy(), counts.precision(), counts.f1(), auc, counts.recall(), split,
                     defined)


def threshold_sweep(scores, labels, thresholds=None) -> list[dict]:
    thresholds = np.linspace(0.05, 0.95, 19) if thresholds is None else thresholds
    out = []
    for t in thresholds:
        c = ConfusionCounts.from_predictions(np.asarray(scores) >= t, labels)
        out.append({"threshold": float(t), "precision": c.precision(), "recall": c.recall(),
                    "f1": c.f1(), "accuracy": c.accuracy()})
    return out


# -- splits ------------------------------------------------------------------------

def stratified_holdout(y, fraction: float, seed: int):
    """Indices ``(rest, holdout)``; each class contributes ``round(fraction * count)`` rows."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("holdout fraction must be in (0, 1)")
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    held = []
    for label in np.unique(y):
        members = rng.permutation(np.flatnonzero(y == label))
        held.append(members[:int(round(fraction * len(members)))])
    holdout = np.sort(np.concatenate(held))
    rest = np.setdiff1d(np.arange(len(y)), holdout)
    return rest, holdout


def stratified_kfold(y, k: int, seed: int) -> list[np.ndarray]:
    """Partition row positions into k folds with per-class counts differing by at most one.

    Classes are dealt round-robin after shuffling, continuing the deal
    where the previous class stopped so fold sizes also stay balanced.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    slot = 0
    for label in np.unique(y):
        for idx in rng.permutation(np.flatnonzero(y == label)):
            folds[slot % k].append(int(idx))
            slot += 1
    return [np.sort(np.asarray(f, dtype=np.int64)) for f in folds]


# -- protocol ----------------------------------------------------------------------

@dataclass
class GridConfig:
    models: list[str] = field(default_factory=lambda: list(MODEL_ORDER))
    samplers: list[str] = field(default_factory=lambda: list(SAMPLER_ORDER))
    feature_sets: list[str] = field(default_factory=lambda: ["financial", "director", "all"])
    k: int = 10
    holdout_fraction: float = 0.2
    threshold: float = 0.5
    cross_validate: bool = True
    k_neighbors: int = 5
    target_ratio: float = 1.0
    imputation: str = "median"
    missing_indicators: bool = True
    hyperparameters: dict = field(default_factory=dict)
    keep_artifacts: bool = False

    def __post_init__(self):
        self.models = [m.upper() for m in self.models]
        for m in self.models:
            if m not in KINDS:
                raise ValueError(f"unknown model {m!r}")
        for s in self.samplers:
            SamplerSpec(s)  # validates the name
        for f in self.feature_sets:
            if f not in FEATURE_SETS:
                raise ValueError(f"unknown feature set {f!r}")
        if self.k < 2:
            raise ValueError("k must be at least 2")

    def cells(self):
        for sampler in self.samplers:
            for model in self.models:
                for features in self.feature_sets:
                    yield model, sampler, features


@dataclass
class CellResult:
    model: str
    sampler: str
    features: str
    rows: dict[str, MetricRow] = field(default_factory=dict)
    status: str = "ok"
    reason: str = ""
    seconds: float = 0.0
    converged: bool = True
    seeds: dict = field(default_factory=dict)
    holdout_scores: np.ndarray | None = None
    artifact: object = field(default=None, repr=False)        # refit model, when kept
    holdout_X: np.ndarray | None = field(default=None, repr=False)

    @property
    def key(self) -> tuple[str, str, str]:
        return self.model, self.sampler, self.features


class LeakageError(AssertionError):
    pass


def _check_no_leakage(sampler_input: Dataset, allowed: np.ndarray, sampled: Dataset) -> None:
    allowed_set = set(allowed.tolist())
    seen = set(sampler_input.row_ids.tolist())
    if not seen <= allowed_set:
        raise LeakageError("sampler received rows outside the training fold")
    parents = sampled.parents[sampled.parents >= 0]
    if not set(parents.tolist()) <= allowed_set:
        raise LeakageError("synthetic rows were interpolated from rows outside the training fold")
    originals = sampled.row_ids[sampled.row_ids >= 0]
    if not set(originals.tolist()) <= allowed_set:
        raise LeakageError("sampled training data contains rows outside the training fold")


def _fit_and_score(data: Dataset, train_idx, eval_idx, model: str, sampler: str, grid: GridConfig,
                   seed: int, labels: tuple, threads: int):
    policy = ImputationPolicy(grid.imputation, grid.missing_indicators)
    train_raw = data.take(train_idx)
    if train_raw.n_positive in (0, train_raw.n_rows):
        raise ValueError("training fold contains a single class")
    imputer = Imputer.fit(train_raw, policy)
    train = imputer.transform(train_raw)
    if sampler != "none":
        spec = SamplerSpec(sampler, grid.k_neighbors, grid.target_ratio,
                           derive_seed(seed, "sampler", *labels))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            sampled = apply_sampler(train, spec)
        _check_no_leakage(train, data.row_ids[train_idx], sampled)
        train = sampled
    mspec = ModelSpec(model, dict(grid.hyperparameters.get(model, {})),
                      derive_seed(seed, "model", *labels))
    artifact = fit(mspec, train, threads=threads)
    evaluated = imputer.transform(data.take(eval_idx))
    train_scores = artifact.predict_proba(train.X)
    eval_scores = artifact.predict_proba(evaluated.X)
    return artifact, (train_scores, train.y), (eval_scores, evaluated.y), evaluated.X


def _mean_rows(rows: list[MetricRow], split: str) -> MetricRow:
    vals = {m: float(np.nanmean([getattr(r, m) for r in rows])) for m in METRICS}
    return MetricRow(**vals, split=split, auc_defined=all(r.auc_defined for r in rows))


def run_cell(data: Dataset, model: str, sampler: str, features: str, grid: GridConfig,
             rest: np.ndarray, holdout: np.ndarray, folds: list[np.ndarray], seed: int,
             threads: int = 1) -> CellResult:
    cell = CellResult(model, sampler, features)
    subset = data.select(features)
    start = time.perf_counter()
    labels = (model, sampler, features)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            converged = True
            if grid.cross_validate:
                train_rows, test_rows = [], []
                for i, fold in enumerate(folds):
                    train_idx = np.setdiff1d(rest, fold)
                    art, tr, te, _ = _fit_and_score(subset, train_idx, fold, model, sampler, grid, seed,
                                                 labels + (f"fold{i}",), threads)
                    converged &= art.converged
                    train_rows.append(metrics(*tr, grid.threshold, "train"))
                    test_rows.append(metrics(*te, grid.threshold, "test"))
                cell.rows["train"] = _mean_rows(train_rows, "train")
                cell.rows["test"] = _mean_rows(test_rows, "test")
            art, tr, ho, ho_X = _fit_and_score(subset, rest, holdout, model, sampler, grid, seed,
                                         labels + ("refit",), threads)
            converged &= art.converged
            if not grid.cross_validate:
                cell.rows["train"] = metrics(*tr, grid.threshold, "train")
            cell.rows["holdout"] = metrics(*ho, grid.threshold, "holdout")
            cell.holdout_scores = ho[0]
            if grid.keep_artifacts:
                cell.artifact, cell.holdout_X = art, ho_X
            cell.converged = bool(converged)
    except (ValueError, np.linalg.LinAlgError) as exc:
        cell.status = "failed"
        cell.reason = str(exc)
        log.warning("cell %s/%s/%s failed: %s", model, sampler, features, exc)
    cell.seconds = time.perf_counter() - start
    return cell


@dataclass
class ExperimentGrid:
    config: GridConfig
    seed: int
    cells: list[CellResult]
    holdout_ids: list
    fold_sizes: list[int]
    holdout_prevalence: float
    cv_prevalence: float

    def cell(self, model: str, sampler: str, features: str) -> CellResult:
        for c in self.cells:
            if c.key == (model.upper(), sampler, features):
                return c
        raise KeyError((model, sampler, features))

    def f1(self, model: str, sampler: str, features: str, split: str = "holdout") -> float:
        c = self.cell(model, sampler, features)
        return c.rows[split].f1 if c.status == "ok" else float("nan")

    def manifest(self, timings: bool = True) -> dict:
        cells = []
        for c in self.cells:
            entry = {"model": c.model, "sampler": c.sampler, "features": c.features,
                     "status": c.status, "reason": c.reason, "converged": c.converged}
            if timings:
                entry["seconds"] = round(c.seconds, 3)
            cells.append(entry)
        return {"seed": self.seed, "config": asdict(self.config), "fold_sizes": self.fold_sizes,
                "holdout_rows": len(self.holdout_ids),
                "holdout_prevalence": self.holdout_prevalence,
                "cv_prevalence": self.cv_prevalence, "cells": cells}


def run_protocol(data: Dataset, grid: GridConfig | None = None, seed: int = 0, threads: int = 1,
                 progress=None) -> ExperimentGrid:
    grid = grid or GridConfig()
    if data.n_positive == 0 or data.n_positive == data.n_rows:
        raise ValueError("the dataset needs both classes")
    rest, holdout = stratified_holdout(data.y, grid.holdout_fraction, derive_seed(seed, "holdout"))
    folds = []
    if grid.cross_validate:
        folds = [rest[f] for f in stratified_kfold(data.y[rest], grid.k, derive_seed(seed, "folds"))]
    cells = []
    for model, sampler, features in grid.cells():
        cell = run_cell(data, model, sampler, features, grid, rest, holdout, folds, seed, threads)
        if progress is not None:
            progress(cell)
        cells.append(cell)
    return ExperimentGrid(grid, seed, cells, data.ids[holdout].tolist(), [len(f) for f in folds],
                          float(data.y[holdout].mean()), float(data.y[rest].mean()))


# -- reports -----------------------------------------------------------------------

def _fmt(v: float) -> str:
    return "" if v is None or not np.isfinite(v) else f"{v:.6f}"


def cells_csv(grid: ExperimentGrid) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["model", "sampler", "features", "split", *METRICS, "status", "converged"])
    for c in grid.cells:
        if c.status != "ok":
            out.writerow([c.model, c.sampler, c.features, "", *[""] * len(METRICS), c.status, ""])
            continue
        for split in SPLITS:
            if split in c.rows:
                r = c.rows[split]
                out.writerow([c.model, c.sampler, c.features, split,
                              *[_fmt(getattr(r, m)) for m in METRICS], c.status, int(c.converged)])
    return buf.getvalue()


def _ordered(values, order):
    return [v for v in order if v in values] + [v for v in values if v not in order]


def holdout_table(grid: ExperimentGrid) -> str:
    """Hold-out metrics with one row per (sampler, model) and a metric block per feature set."""
    cfg = grid.config
    features = _ordered(cfg.feature_sets, FEATURE_SETS)
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["sampler", "model"] + [f"{fs}_{m}" for fs in features for m in METRICS])
    for sampler in _ordered(cfg.samplers, SAMPLER_ORDER):
        for model in _ordered(cfg.models, MODEL_ORDER):
            row = [sampler, model]
            for fs in features:
                c = grid.cell(model, sampler, fs)
                r = c.rows.get("holdout") if c.status == "ok" else None
                row += [_fmt(getattr(r, m)) if r else "" for m in METRICS]
            out.writerow(row)
    return buf.getvalue()


def _average_table(grid: ExperimentGrid, by: str) -> str:
    cfg = grid.config
    samplers = _ordered(cfg.samplers, SAMPLER_ORDER)
    if by == "model":
        keys = _ordered(cfg.models, MODEL_ORDER)
    else:
        keys = _ordered(cfg.feature_sets, ("director", "financial", "all"))
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow([by] + [f"{s}_{m}" for s in samplers for m in METRICS])
    for key in keys:
        row = [key]
        for s in samplers:
            chosen = [c for c in grid.cells if c.sampler == s and c.status == "ok"
                      and (c.model if by == "model" else c.features) == key]
            for m in METRICS:
                vals = [getattr(c.rows["holdout"], m) for c in chosen]
                row.append(_fmt(float(np.nanmean(vals))) if vals else "")
        out.writerow(row)
    return buf.getvalue()


def model_sampler_table(grid: ExperimentGrid) -> str:
    """Hold-out metrics averaged over feature sets, per model and sampler."""
    return _average_table(grid, "model")


def features_sampler_table(grid: ExperimentGrid) -> str:
    """Hold-out metrics averaged over models, per feature set and sampler."""
    return _average_table(grid, "features")


def repeats_csv(grids: list[ExperimentGrid]) -> str:
    """Mean and standard deviation of hold-out metrics over repeated protocol runs."""
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["model", "sampler", "features", "runs"]
                 + [f"{m}_{stat}" for m in METRICS for stat in ("mean", "sd")])
    for first in grids[0].cells:
        key = first.key
        rows = [g.cell(*key).rows["holdout"] for g in grids
                if g.cell(*key).status == "ok" and "holdout" in g.cell(*key).rows]
        line = [*key, len(rows)]
        for m in METRICS:
            vals = np.array([getattr(r, m) for r in rows], dtype=float)
            vals = vals[np.isfinite(vals)]
            line += [_fmt(vals.mean()) if vals.size else "",
                     _fmt(vals.std(ddof=1)) if vals.size > 1 else ""]
        out.writerow(line)
    return buf.getvalue()


# -- descriptive statistics ------------------------------------------------------

@dataclass
class ColumnSummary:
    name: str
    minimum: float
    median: float
    maximum: float
    mean: float
    missing_pct: float
    count: int


def summarize(name: str, values) -> ColumnSummary:
    v = np.asarray(values, dtype=float)
    observed = v[~np.isnan(v)]
    missing = 100.0 * (len(v) - len(observed)) / len(v) if len(v) else 0.0
    if observed.size == 0:
        nan = float("nan")
        return ColumnSummary(name, nan, nan, nan, nan, missing, 0)
    return ColumnSummary(name, float(observed.min()), float(np.median(observed)),
                         float(observed.max()), float(observed.mean()), missing, int(observed.size))


FINANCIAL_STAT_FIELDS = ("turnover", "ebitda", "profit_margin", "shareholder_funds")


def descriptive_stats(source, fields=None) -> list[ColumnSummary]:
    """Min / median / max / mean / % missing per column.

    ``source`` is a ``Dataset`` (one summary per feature column) or a
    ``RecordStore``, where the latest financial row of every company is
    summarised together with the number of serving directors per company.
    """
    if isinstance(source, Dataset):
        names = fields or source.feature_names
        return [summarize(n, source.X[:, source.feature_names.index(n)]) for n in names]
    from dealscope.ingest import latest_row

    fields = fields or FINANCIAL_STAT_FIELDS
    companies = [source.companies[cid] for cid in sorted(source.companies)]
    latest = [latest_row(c, date.max) for c in companies]
    out = []
    for name in fields:
        out.append(summarize(name, [np.nan if r is None or getattr(r, name) is None
                                    else getattr(r, name) for r in latest]))
    directors: dict[str, int] = {c.company_id: 0 for c in companies}
    for appt in source.officers:
        if appt.role == "director" and appt.resigned_on is None and appt.company_id in directors:
            directors[appt.company_id] += 1
    out.append(summarize("directors", list(directors.values())))
    return out


def stats_csv(summaries: list[ColumnSummary]) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["field", "min", "median", "max", "mean", "missing_pct", "count"])
    for s in summaries:
        out.writerow([s.name, _fmt(s.minimum), _fmt(s.median), _fmt(s.maximum), _fmt(s.mean),
                      f"{s.missing_pct:.2f}", s.count])
    return buf.getvalue()
