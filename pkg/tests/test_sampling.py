from __future__ import annotations

import numpy as np
import pytest

from dealscope.dataset import Dataset
from dealscope.evaluation import LeakageError, _check_no_leakage
from dealscope.sampling import (
    SamplerSpec,
    apply_sampler,
    oversample,
    segment_distance,
    smote,
    undersample,
)


def make_data(n=300, n_pos=17, d=4, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d)) * np.array([1.0, 100.0, 0.01, 5.0])[:d]
    y = np.zeros(n, dtype=int)
    y[rng.choice(n, n_pos, replace=False)] = 1
    return Dataset(X, y, [f"f{j}" for j in range(d)], ["financial"] * d,
                   np.array([f"C{i}" for i in range(n)], dtype=object))


def test_segment_distance_basics():
    a, b = np.array([0.0, 0.0]), np.array([2.0, 0.0])
    assert segment_distance(np.array([1.0, 0.0]), a, b) == 0.0
    assert segment_distance(np.array([1.0, 1.0]), a, b) == 1.0
    assert segment_distance(np.array([3.0, 0.0]), a, b) == 1.0
    assert segment_distance(np.array([0.0, 2.0]), a, a) == 2.0


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_smote_counts_and_segments(seed):
    data = make_data(seed=seed)
    out = smote(data, SamplerSpec("smote", seed=seed))
    assert abs(int((out.y == 1).sum()) - int((out.y == 0).sum())) <= 1
    new = out.row_ids < 0
    assert new.sum() == (data.y == 0).sum() - (data.y == 1).sum()
    mean, std = data.X.mean(axis=0), data.X.std(axis=0)
    z = lambda v: (v - mean) / std
    minority_rows = set(np.flatnonzero(data.y == 1).tolist())
    for point, (i, j) in zip(out.X[new], out.parents[new]):
        assert i in minority_rows and j in minority_rows and i != j
        assert segment_distance(z(point), z(data.X[i]), z(data.X[j])) <= 1e-9
    # originals are kept unchanged and in order
    np.testing.assert_array_equal(out.X[:data.n_rows], data.X)


def test_smote_neighbours_are_nearest():
    data = make_data(seed=4)
    k = 3
    out = smote(data, SamplerSpec("smote", k_neighbors=k, seed=4))
    minority = np.flatnonzero(data.y == 1)
    Z = (data.X - data.X.mean(axis=0)) / data.X.std(axis=0)
    for i, j in out.parents[out.row_ids < 0]:
        d = np.linalg.norm(Z[minority] - Z[i], axis=1)
        d[minority == i] = np.inf
        nearest = set(minority[np.argsort(d, kind="stable")[:k]].tolist())
        assert j in nearest


def test_smote_target_ratio_and_small_minority():
    data = make_data(n=200, n_pos=20)
    half = smote(data, SamplerSpec("smote", target_ratio=0.5))
    assert int((half.y == 1).sum()) == 90
    tiny = make_data(n=50, n_pos=3)
    with pytest.warns(UserWarning, match="reducing k_neighbors"):
        out = smote(tiny, SamplerSpec("smote", k_neighbors=5))
    assert out.meta["smote_k"] == 2
    single = make_data(n=50, n_pos=1)
    with pytest.warns(UserWarning, match="falling back"):
        out = smote(single, SamplerSpec("smote"))
    assert int(out.y.sum()) == 49


def test_smote_rejects_missing_values():
    data = make_data()
    data.X[0, 0] = np.nan
    with pytest.raises(ValueError, match="impute"):
        smote(data, SamplerSpec("smote"))


def test_undersample_and_oversample():
    data = make_data()
    under = undersample(data, SamplerSpec("undersample", seed=3))
    assert int(under.y.sum()) == 17 and under.n_rows == 34
    assert len(set(under.row_ids.tolist())) == 34
    over = oversample(data, SamplerSpec("oversample", seed=3))
    assert int(over.y.sum()) == int((over.y == 0).sum()) == 283
    assert set(over.row_ids[data.n_rows:].tolist()) <= set(np.flatnonzero(data.y == 1).tolist())


@pytest.mark.parametrize("kind", ["undersample", "oversample", "smote"])
def test_samplers_deterministic(kind):
    data = make_data()
    a = apply_sampler(data, SamplerSpec(kind, seed=11))
    b = apply_sampler(data, SamplerSpec(kind, seed=11))
    c = apply_sampler(data, SamplerSpec(kind, seed=12))
    np.testing.assert_array_equal(a.X, b.X)
    assert not (a.X.shape == c.X.shape and np.array_equal(a.X, c.X))


def test_spec_validation():
    with pytest.raises(ValueError):
        SamplerSpec("adasyn")
    with pytest.raises(ValueError):
        SamplerSpec("smote", target_ratio=1.5)
    with pytest.raises(ValueError):
        SamplerSpec("smote", k_neighbors=0)


def test_leakage_check_catches_foreign_parents():
    data = make_data()
    train_idx = np.arange(0, 200)
    train = data.take(train_idx)
    sampled = smote(train, SamplerSpec("smote"))
    _check_no_leakage(train, data.row_ids[train_idx], sampled)
    forged = sampled.take(np.arange(sampled.n_rows))
    forged.parents[-1] = [250, 251]
    with pytest.raises(LeakageError):
        _check_no_leakage(train, data.row_ids[train_idx], forged)
    with pytest.raises(LeakageError):
        _check_no_leakage(data.take(np.arange(0, 210)), data.row_ids[train_idx], sampled)
