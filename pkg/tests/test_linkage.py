from __future__ import annotations

import random
from dataclasses import dataclass

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dealscope.linkage import (
    CandidateIndex,
    MatchTier,
    levenshtein,
    levenshtein_ratio,
    match_deals,
    normalize_name,
)

from oracles import lev_recursive


@dataclass
class Deal:
    deal_name: str
    city: str


@dataclass
class Company:
    company_id: str
    name: str
    city: str


short = st.text(alphabet="abcd ", max_size=9)


@pytest.mark.parametrize("a,b,d", [
    ("", "", 0), ("", "abc", 3), ("kitten", "sitting", 3), ("flaw", "lawn", 2),
    ("abc", "abc", 0), ("abc", "cba", 2), ("intention", "execution", 5),
])
def test_levenshtein_known_values(a, b, d):
    assert levenshtein(a, b) == d
    assert lev_recursive(a, b) == d


@settings(max_examples=400, deadline=None)
@given(short, short)
def test_levenshtein_matches_recursion(a, b):
    assert levenshtein(a, b) == lev_recursive(a, b)


@settings(max_examples=300, deadline=None)
@given(short, short, short)
def test_levenshtein_metric_axioms(a, b, c):
    assert levenshtein(a, b) == levenshtein(b, a)
    assert (levenshtein(a, b) == 0) == (a == b)
    assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)
    assert abs(len(a) - len(b)) <= levenshtein(a, b) <= max(len(a), len(b))


@settings(max_examples=300, deadline=None)
@given(short, short, st.integers(min_value=0, max_value=6))
def test_levenshtein_cap(a, b, cap):
    full = lev_recursive(a, b)
    capped = levenshtein(a, b, max_distance=cap)
    assert capped == (full if full <= cap else cap + 1)


def test_ratio_bounds_and_empty():
    assert levenshtein_ratio("", "") == 1.0
    assert levenshtein_ratio("abc", "") == 0.0
    assert levenshtein_ratio("abcd", "abce") == pytest.approx(0.75)


@pytest.mark.parametrize("raw,normalized", [
    ("Acme Widgets Limited", "acme widgets"),
    ("ACME WIDGETS LTD.", "acme widgets"),
    ("Acme Widgets (UK) Holdings Ltd", "acme widgets"),
    ("O'Brien & Sons PLC", "obrien sons"),
    ("Cera - Limited", "cera"),
    ("Alpha Group Company", "alpha"),
])
def test_normalize_examples(raw, normalized):
    assert normalize_name(raw).normalized == normalized


def test_only_legal_tokens_keeps_cleaned_form():
    n = normalize_name("Holdings Limited")
    assert n.normalized == ""
    assert n.only_legal_tokens
    assert n.match_key == "holdings limited"
    assert not normalize_name("").only_legal_tokens


def _random_name(rng: random.Random) -> str:
    words = ["".join(rng.choice("abcdefgh") for _ in range(rng.randint(3, 7)))
             for _ in range(rng.randint(1, 3))]
    return " ".join(words)


@pytest.mark.parametrize("lo", [0.5, 0.7, 0.85])
def test_candidate_filter_never_drops_qualifying_pairs(lo):
    rng = random.Random(7)
    keys = [_random_name(rng) for _ in range(300)]
    # near copies so the filter has real qualifying pairs to keep
    keys += [k[:-1] + "z" for k in keys[:100]]
    index = CandidateIndex(keys)
    for _ in range(60):
        query = rng.choice(keys)
        if rng.random() < 0.5:
            i = rng.randrange(len(query))
            query = query[:i] + rng.choice("abcxyz") + query[i + 1:]
        kept = set(index.candidates(query, lo).tolist())
        brute = {i for i, k in enumerate(keys) if levenshtein_ratio(query, k) >= lo}
        assert brute <= kept


def test_tiers_and_city_rule():
    companies = [
        Company("C1", "Abcdefghij Limited", "Leeds"),
        Company("C2", "Zyxwvutsrq Limited", "York"),
        Company("C3", "Mnopqrstuv Ltd", "Bath"),
    ]
    deals = [
        Deal("Abcdefghij", "London"),        # ratio 1.0 -> HIGH whatever the city
        Deal("Zyxwvutaaa", "York"),          # ratio 0.7, city agrees -> MID_CITY
        Deal("Mnopqrsaaa", "Leeds"),         # ratio 0.7, city differs -> rejected
        Deal("Nothing Alike At All", "Bath"),
    ]
    results, funnel = match_deals(deals, companies, hi=0.9, lo=0.7)
    by_name = {r.deal_name: r for r in results}
    assert by_name["Abcdefghij"].tier is MatchTier.HIGH
    assert by_name["Abcdefghij"].company_id == "C1"
    assert by_name["Zyxwvutaaa"].tier is MatchTier.MID_CITY
    assert by_name["Zyxwvutaaa"].company_id == "C2"
    assert by_name["Mnopqrsaaa"].tier is MatchTier.REJECTED
    assert not by_name["Mnopqrsaaa"].accepted
    assert by_name["Nothing Alike At All"].company_id is None
    assert (funnel.high, funnel.mid_band, funnel.mid_matched, funnel.matched) == (1, 2, 1, 2)


def test_city_agreement_uses_any_deal_row():
    companies = [Company("C1", "Zyxwvutsrq", "York")]
    deals = [Deal("Zyxwvutaaa", "Leeds"), Deal("Zyxwvutaaa", "york ")]
    results, funnel = match_deals(deals, companies)
    assert results[0].tier is MatchTier.MID_CITY
    assert funnel.deal_rows == 2 and funnel.unique_names == 1


def test_ties_go_to_smallest_id():
    companies = [Company("C9", "Acme Widgets Ltd", "York"), Company("C2", "Acme Widgets PLC", "York")]
    results, _ = match_deals([Deal("Acme Widgets", "")], companies)
    assert results[0].company_id == "C2"


def test_thresholds_validated():
    with pytest.raises(ValueError):
        match_deals([], [], hi=0.6, lo=0.7)


def test_matches_full_scan():
    rng = random.Random(3)
    companies = [Company(f"C{i:04d}", _random_name(rng), rng.choice(["a", "b"])) for i in range(200)]
    deals = []
    for c in rng.sample(companies, 80):
        name = c.name
        for _ in range(rng.randint(0, 3)):
            i = rng.randrange(len(name))
            name = name[:i] + rng.choice("abcxyz") + name[i + 1:]
        deals.append(Deal(name, rng.choice(["a", "b"])))
    results, _ = match_deals(deals, companies, hi=0.9, lo=0.7)
    keys = {c.company_id: normalize_name(c.name).match_key for c in companies}
    for r in results:
        q = normalize_name(r.deal_name).match_key
        scored = sorted((-levenshtein_ratio(q, k), cid) for cid, k in keys.items())
        best_ratio, best_id = -scored[0][0], scored[0][1]
        if best_ratio < 0.7:
            assert r.company_id is None
        else:
            assert r.company_id == best_id
            assert r.ratio == pytest.approx(best_ratio)


def test_funnel_rows():
    companies = [Company("C1", "Abcdefghij", "Leeds")]
    _, funnel = match_deals([Deal("Abcdefghij", "x"), Deal("Qqqq", "y")], companies)
    labels = [row["filtering"] for row in funnel.rows()]
    assert labels == [
        "Deal dataset",
        "Unique companies in the deal dataset",
        ">=90% match confidence",
        ">=70% and <90% match confidence",
        ">=70% and <90% match confidence, matched",
        "Companies matched",
    ]
    rows = funnel.rows()
    assert rows[1]["observations"] == 2 and rows[1]["percentage"] == 100
    assert rows[-1]["observations"] == 1 and rows[-1]["percentage"] == 50
    assert funnel.to_dict()["matched"] == 1
