from __future__ import annotations

import csv
import io

import numpy as np
import pytest

from dealscope.dataset import Dataset
from dealscope.evaluation import (
    ConfusionCounts,
    GridConfig,
    cells_csv,
    descriptive_stats,
    features_sampler_table,
    holdout_table,
    metrics,
    model_sampler_table,
    repeats_csv,
    roc_auc,
    run_protocol,
    stratified_holdout,
    stratified_kfold,
    summarize,
    threshold_sweep,
)

from oracles import auc_pairs


def test_worked_confusion_example():
    # 100 companies, 3 true deals, 3 flagged, 2 of them right
    labels = np.array([1, 1, 1] + [0] * 97)
    scores = np.array([0.9, 0.8, 0.2, 0.7] + [0.1] * 96)
    c = ConfusionCounts.from_predictions(scores >= 0.5, labels)
    assert (c.tp, c.fp, c.fn, c.tn) == (2, 1, 1, 96)
    row = metrics(scores, labels)
    assert row.precision == 2 / 3
    assert row.recall == 2 / 3
    assert row.f1 == 2 / 3
    assert row.accuracy == 0.98


def test_zero_divisions_are_zero():
    c = ConfusionCounts(0, 0, 3, 97)
    assert c.precision() == 0.0 and c.recall() == 0.0 and c.f1() == 0.0


@pytest.mark.parametrize("seed", range(20))
def test_auc_matches_pair_counting(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 60))
    scores = rng.integers(0, 8, size=n) / 8.0    # coarse grid forces ties
    labels = rng.integers(0, 2, size=n)
    labels[0], labels[1] = 0, 1
    assert roc_auc(scores, labels) == pytest.approx(auc_pairs(scores, labels), abs=1e-12)


def test_auc_single_class_warns():
    assert np.isnan(roc_auc([0.1, 0.2], [0, 0]))
    with pytest.warns(UserWarning, match="undefined"):
        row = metrics([0.1, 0.2], [1, 1])
    assert not row.auc_defined


def test_threshold_sweep_monotone_recall():
    rng = np.random.default_rng(0)
    sweep = threshold_sweep(rng.random(200), rng.integers(0, 2, 200))
    recalls = [r["recall"] for r in sweep]
    assert recalls == sorted(recalls, reverse=True)


def test_stratified_holdout_counts():
    y = np.array([1] * 43 + [0] * 957)
    rest, held = stratified_holdout(y, 0.2, seed=1)
    assert int(y[held].sum()) == round(0.2 * 43)
    assert len(held) == round(0.2 * 43) + round(0.2 * 957)
    assert set(rest).isdisjoint(held) and len(rest) + len(held) == 1000
    again = stratified_holdout(y, 0.2, seed=1)
    np.testing.assert_array_equal(again[1], held)


def test_stratified_kfold_partition():
    y = np.array([1] * 23 + [0] * 477)
    folds = stratified_kfold(y, 10, seed=2)
    joined = np.sort(np.concatenate(folds))
    np.testing.assert_array_equal(joined, np.arange(500))
    pos = [int(y[f].sum()) for f in folds]
    neg = [len(f) - p for f, p in zip(folds, pos)]
    sizes = [len(f) for f in folds]
    assert max(pos) - min(pos) <= 1 and max(neg) - min(neg) <= 1 and max(sizes) - min(sizes) <= 1


def _dataset(n=400, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 4))
    y = (X[:, 0] + X[:, 2] + rng.normal(size=n) > 2.2).astype(int)
    X[rng.random(size=(n, 4)) < 0.05] = np.nan
    return Dataset(X, y, ["employees", "ebitda", "avg_tenure", "n_active_directors"],
                   ["financial", "financial", "director", "director"],
                   np.array([f"C{i:04d}" for i in range(n)], dtype=object))


SMALL = dict(models=["LR", "DT"], samplers=["undersample", "smote"], feature_sets=["financial", "all"],
             k=3, hyperparameters={"LR": {"max_epochs": 200}})


def test_protocol_deterministic_and_complete():
    data = _dataset()
    a = run_protocol(data, GridConfig(**SMALL), seed=5)
    b = run_protocol(data, GridConfig(**SMALL), seed=5)
    assert len(a.cells) == 8
    assert all(c.status == "ok" for c in a.cells)
    assert cells_csv(a) == cells_csv(b)
    assert a.manifest(timings=False) == b.manifest(timings=False)
    c = a.cell("LR", "smote", "all")
    assert set(c.rows) == {"train", "test", "holdout"}
    assert len(a.fold_sizes) == 3 and sum(a.fold_sizes) + len(a.holdout_ids) == data.n_rows


def test_holdout_only_mode():
    data = _dataset()
    grid = run_protocol(data, GridConfig(**{**SMALL, "cross_validate": False, "keep_artifacts": True}), seed=5)
    c = grid.cell("DT", "smote", "financial")
    assert set(c.rows) == {"train", "holdout"}
    assert c.artifact is not None and c.holdout_X.shape[0] == len(grid.holdout_ids)
    # the hold-out split does not depend on the protocol mode
    full = run_protocol(data, GridConfig(**SMALL), seed=5)
    assert grid.holdout_ids == full.holdout_ids


def test_report_tables_shapes():
    grid = run_protocol(_dataset(), GridConfig(**SMALL), seed=1)
    rows = list(csv.reader(io.StringIO(holdout_table(grid))))
    assert rows[0][:2] == ["sampler", "model"] and len(rows[0]) == 2 + 2 * 5
    assert [r[:2] for r in rows[1:]] == [["undersample", "LR"], ["undersample", "DT"],
                                        ["smote", "LR"], ["smote", "DT"]]
    ms = list(csv.reader(io.StringIO(model_sampler_table(grid))))
    assert [r[0] for r in ms[1:]] == ["LR", "DT"]
    fs = list(csv.reader(io.StringIO(features_sampler_table(grid))))
    assert [r[0] for r in fs[1:]] == ["financial", "all"]
    rep = list(csv.reader(io.StringIO(repeats_csv([grid, grid]))))
    assert len(rep) == 9 and rep[1][3] == "2"
    f1_sd = rep[0].index("f1_sd")
    assert float(rep[1][f1_sd]) == 0.0


def test_failed_cell_recorded():
    data = _dataset(n=60)
    data.X[:, 2:] = np.nan           # director columns entirely missing
    grid = run_protocol(data, GridConfig(models=["LR"], samplers=["smote"], feature_sets=["director"],
                                         k=2), seed=0)
    cell = grid.cells[0]
    assert cell.status == "failed" and "no observed values" in cell.reason
    assert ",failed," in cells_csv(grid)


def test_grid_config_validation():
    with pytest.raises(ValueError):
        GridConfig(models=["GBM"])
    with pytest.raises(ValueError):
        GridConfig(samplers=["adasyn"])
    with pytest.raises(ValueError):
        GridConfig(feature_sets=["text"])


def test_descriptive_stats():
    s = summarize("x", [1.0, np.nan, 3.0, 2.0])
    assert (s.minimum, s.median, s.maximum, s.mean, s.missing_pct, s.count) == (1, 2, 3, 2, 25.0, 3)
    data = _dataset()
    names = [c.name for c in descriptive_stats(data)]
    assert names == data.feature_names
