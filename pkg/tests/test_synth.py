from __future__ import annotations

import hashlib

import numpy as np
import pytest

from dealscope import synth
from dealscope.evaluation import descriptive_stats
from dealscope.ingest import collapse_holding_duplicates, load_directory, remove_institutional_officers
from dealscope.linkage import levenshtein, match_deals, normalize_name


def _digest(directory):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(directory.iterdir())}


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    paths, truth = synth.generate(synth.GeneratorConfig(n_companies=4000, seed=3), out)
    return out, truth


def test_same_seed_same_bytes(tmp_path):
    cfg = dict(n_companies=600, seed=9)
    synth.generate(synth.GeneratorConfig(**cfg), tmp_path / "a")
    synth.generate(synth.GeneratorConfig(**cfg), tmp_path / "b")
    synth.generate(synth.GeneratorConfig(n_companies=600, seed=10), tmp_path / "c")
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
    assert _digest(tmp_path / "a")["companies.csv"] != _digest(tmp_path / "c")["companies.csv"]


def test_calibration_read_back_from_files(corpus):
    out, truth = corpus
    store = load_directory(out)
    assert store.errors == []
    c = synth.CalibrationTargets()
    stats = {s.name: s for s in descriptive_stats(store)}
    for name in ("turnover", "ebitda", "profit_margin", "shareholder_funds"):
        s = stats[name]
        assert s.median == pytest.approx(getattr(c, f"{name}_median"), rel=0.05)
        assert s.mean == pytest.approx(getattr(c, f"{name}_mean"), rel=0.05)
        assert s.missing_pct / 100 == pytest.approx(getattr(c, f"{name}_missing"), abs=0.01)
    # director counts are read from the cleaned registry, as the stats stage does
    store, _ = collapse_holding_duplicates(remove_institutional_officers(store))
    directors = {s.name: s for s in descriptive_stats(store)}["directors"]
    assert directors.median == c.directors_median
    assert directors.mean == pytest.approx(c.directors_mean, rel=0.05)
    amounts = np.array([d.deal_value.amount for d in store.deals if d.deal_value.amount is not None])
    assert amounts.min() >= c.deal_value_min and amounts.max() <= c.deal_value_max
    assert np.median(amounts) == pytest.approx(c.deal_value_median, rel=0.05)
    assert amounts.mean() == pytest.approx(c.deal_value_mean, rel=0.05)
    undisclosed = np.mean([d.deal_value.amount is None for d in store.deals])
    assert undisclosed == pytest.approx(c.deal_value_undisclosed, abs=0.05)


def test_truth_consistency(corpus):
    out, truth = corpus
    store = load_directory(out)
    assert len(truth.deal_links) == len(store.deals)
    rate = np.mean(list(truth.labels.values()))
    assert rate == pytest.approx(0.0083, abs=0.004)
    collapsed, dropped = collapse_holding_duplicates(store)
    assert set(dropped) == set(truth.holding_duplicates)
    for twin, survivor in truth.holding_duplicates.items():
        assert survivor < twin and survivor in collapsed.companies
    cleaned = remove_institutional_officers(store)
    assert not {a.officer_id for a in cleaned.officers} & set(truth.agency_officers)
    agency = [a for a in store.officers if a.officer_id in truth.agency_officers]
    assert len(agency) == truth.agency_appointments
    back = synth.GroundTruth.load(out / "ground_truth.json")
    assert back == truth


def test_default_corruption_linkage(corpus):
    out, truth = corpus
    store, _ = collapse_holding_duplicates(load_directory(out))
    results, funnel = match_deals(store.deals, store.companies.values())
    report = synth.verify_against_truth(results, [d.deal_name for d in store.deals], truth)
    assert report.linkage_recall >= 0.95
    assert report.linkage_precision >= 0.97
    assert funnel.unique_names == len(truth.name_links([d.deal_name for d in store.deals]))


@pytest.mark.parametrize("corruption,expect_recall", [
    (synth.NameCorruption(suffix_rate=0.0, edit_rate=0.0), 1.0),
    (synth.NameCorruption(suffix_rate=1.0, edit_rate=0.0), 1.0),
])
def test_clean_names_link_perfectly(tmp_path, corruption, expect_recall):
    cfg = synth.GeneratorConfig(n_companies=1500, seed=4, name_corruption=corruption)
    synth.generate(cfg, tmp_path)
    truth = synth.GroundTruth.load(tmp_path / "ground_truth.json")
    store, _ = collapse_holding_duplicates(load_directory(tmp_path))
    results, _ = match_deals(store.deals, store.companies.values())
    report = synth.verify_against_truth(results, [d.deal_name for d in store.deals], truth)
    assert report.linkage_recall == expect_recall


def test_corrupt_name_rates():
    rng = np.random.default_rng(0)
    spec = synth.NameCorruption(suffix_rate=0.0, edit_rate=0.0)
    assert synth.corrupt_name("Brackly Foods", "Limited", rng, spec) == "Brackly Foods Limited"
    spec = synth.NameCorruption(suffix_rate=1.0, edit_rate=0.0)
    for _ in range(20):
        name = synth.corrupt_name("Brackly Foods", "Limited", rng, spec)
        assert normalize_name(name).normalized == "brackly foods"
    spec = synth.NameCorruption(suffix_rate=0.0, edit_rate=0.05)
    base = "abcdefghijklmnopqrst" * 5
    dists = [levenshtein(base, normalize_name(synth.corrupt_name(base, "", rng, spec)).normalized)
             for _ in range(200)]
    assert np.mean(dists) / len(base) == pytest.approx(0.05, abs=0.015)


def test_calibration_helpers():
    rng = np.random.default_rng(1)
    u = synth.stratified_uniform(rng, 1000)
    assert np.all(np.floor(np.sort(u) * 1000) == np.arange(1000))
    v = rng.lognormal(size=501)
    out = synth.affine_calibrate(v, 10.0, 25.0)
    assert np.median(out) == pytest.approx(10.0) and out.mean() == pytest.approx(25.0)
    np.testing.assert_array_equal(np.argsort(out), np.argsort(v))
    with pytest.raises(ValueError):
        synth.affine_calibrate(v, 10.0, 5.0)        # right-skewed shape cannot give mean < median
    pmf = synth.director_pmf(4.0, 4.47)
    support = np.arange(1, len(pmf) + 1)
    assert pmf @ support == pytest.approx(4.47, rel=1e-3)


def test_infeasible_targets_rejected():
    bad = synth.GeneratorConfig(calibration=synth.CalibrationTargets(deal_value_mean=90.0))
    with pytest.raises(ValueError, match="infeasible"):
        bad.validate()
    with pytest.raises(ValueError, match="nondecreasing"):
        synth.GeneratorConfig(calibration=synth.CalibrationTargets(deal_value_q1=20.0)).validate()
    with pytest.raises(ValueError):
        synth.generate(synth.GeneratorConfig(positive_rate=0.0))
    with pytest.raises(ValueError, match="unknown synth setting"):
        synth.GeneratorConfig.from_dict({"n_company": 5})
    with pytest.raises(ValueError, match="signal"):
        synth.GeneratorConfig.from_dict({"signal": {"agee": 1.0}})


def test_config_dict_round_trip():
    cfg = synth.GeneratorConfig(n_companies=123, signal=synth.SignalSpec(age=-2.0))
    assert synth.GeneratorConfig.from_dict(cfg.to_dict()) == cfg
