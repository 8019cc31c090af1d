from __future__ import annotations

import csv
import json
from datetime import date

import pytest

from dealscope.ingest import (
    COMPANY_COLUMNS,
    DEAL_COLUMNS,
    FINANCIAL_COLUMNS,
    OFFICER_COLUMNS,
    DealValue,
    MatchedCompany,
    SchemaError,
    collapse_holding_duplicates,
    dedupe_and_trim,
    kept,
    load_directory,
    parse_deal_value,
    remove_institutional_officers,
    write_error_log,
)


def _write(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for row in rows:
            w.writerow({c: row.get(c, "") for c in columns})


def _fin(cid, period, **values):
    return {"company_id": cid, "period_end": period, **values}


@pytest.fixture
def source_dir(tmp_path):
    _write(tmp_path / "companies.csv", COMPANY_COLUMNS, [
        {"company_id": "C1", "name": "Acme Ltd", "city": "Leeds", "incorporation_date": "2001-03-04"},
        {"company_id": "C2", "name": "Acme Holdings Limited", "city": "Leeds",
         "incorporation_date": "2005-01-01", "parent_id": "G1"},
        {"company_id": "C0", "name": "Acme Trading Ltd", "city": "Leeds",
         "incorporation_date": "2001-03-04", "parent_id": "G1"},
        {"company_id": "C3", "name": "Other Ltd", "city": "York", "incorporation_date": "not-a-date"},
        {"company_id": "C1", "name": "Dup Ltd", "city": "York", "incorporation_date": "2001-01-01"},
    ])
    _write(tmp_path / "financials.csv", FINANCIAL_COLUMNS, [
        _fin("C0", "2018-12-31", turnover="100", ebitda="10", employees="5"),
        _fin("C2", "2018-12-31", turnover="100", ebitda="10"),
        _fin("C1", "2018-12-31", turnover="1,250.5", employees="3"),
        _fin("C1", "2018-06-30", turnover="1"),             # same year twice
        _fin("C1", "1999-12-31", turnover="1"),             # before incorporation
        _fin("C9", "2018-12-31", turnover="1"),             # unknown company
        _fin("C1", "2017-12-31", employees="2.5"),          # non-integer headcount
    ])
    _write(tmp_path / "officers.csv", OFFICER_COLUMNS, [
        {"officer_id": "P1", "company_id": "C1", "role": "Director", "appointed_on": "2010-01-01",
         "birth_year": "1970"},
        {"officer_id": "A1", "company_id": "C1", "role": "secretary", "appointed_on": "2010-01-01",
         "is_institutional": "true"},
        {"officer_id": "P2", "company_id": "C2", "role": "director", "appointed_on": "2012-01-01"},
        {"officer_id": "P3", "company_id": "C1", "role": "director", "appointed_on": "2012-01-01",
         "resigned_on": "2011-01-01"},
        {"officer_id": "P4", "company_id": "C1", "role": "chairman", "appointed_on": "2012-01-01"},
    ])
    _write(tmp_path / "deals.csv", DEAL_COLUMNS, [
        {"deal_name": "Acme", "deal_date": "2020-01-10", "city": "Leeds", "deal_value": "12.5"},
        {"deal_name": "Other", "deal_date": "2020-01-11", "city": "York", "deal_value": "n/d (25 - 50£m)"},
        {"deal_name": "Bad", "deal_date": "2020-01-11", "deal_value": "lots"},
    ])
    return tmp_path


@pytest.mark.parametrize("text,expected", [
    ("12.5", DealValue(amount=12.5)),
    ("1,200", DealValue(amount=1200.0)),
    ("", DealValue()),
    (None, DealValue()),
    ("n/d (<25£m)", DealValue(high=25.0)),
    ("n/d (25 - 50£m)", DealValue(low=25.0, high=50.0)),
    ("n/d (50 - 100m)", DealValue(low=50.0, high=100.0)),
    ("N/D (25-50)", DealValue(low=25.0, high=50.0)),
])
def test_parse_deal_value(text, expected):
    assert parse_deal_value(text) == expected


def test_deal_value_text_round_trip():
    for text in ("12.5", "n/d (<25m)", "n/d (25 - 50m)"):
        assert str(parse_deal_value(text)) == text


def test_load_rejects_bad_rows_once_each(source_dir, tmp_path):
    store = load_directory(source_dir)
    assert sorted(store.companies) == ["C0", "C1", "C2"]
    reasons = sorted((e.source, e.reason) for e in store.errors)
    assert reasons == sorted([
        ("companies.csv", "bad_date"),
        ("companies.csv", "duplicate_id"),
        ("financials.csv", "duplicate_year"),
        ("financials.csv", "before_incorporation"),
        ("financials.csv", "unknown_company"),
        ("financials.csv", "bad_number"),
        ("officers.csv", "date_order"),
        ("officers.csv", "bad_role"),
        ("deals.csv", "bad_deal_value"),
    ])
    # line numbers count the header as line 1
    bad_date = next(e for e in store.errors if e.reason == "bad_date")
    assert bad_date.line == 5
    c1 = store.companies["C1"]
    assert c1.city == "leeds"
    assert c1.financials_by_year[2018].turnover == 1250.5
    assert c1.financials_by_year[2018].employees == 3
    log = tmp_path / "errors.jsonl"
    write_error_log(store.errors, log)
    lines = log.read_text().splitlines()
    assert len(lines) == len(store.errors)
    assert {"source", "line", "reason", "detail"} == set(json.loads(lines[0]))


def test_missing_column_aborts(source_dir):
    _write(source_dir / "deals.csv", ("deal_name", "city"), [{"deal_name": "x", "city": "y"}])
    with pytest.raises(SchemaError, match="deal_date"):
        load_directory(source_dir)


def test_missing_file_named(source_dir):
    (source_dir / "officers.csv").unlink()
    with pytest.raises(SchemaError, match="officers.csv"):
        load_directory(source_dir)


def test_institutional_removal(source_dir):
    store = remove_institutional_officers(load_directory(source_dir))
    assert all(not a.is_institutional for a in store.officers)
    assert {a.officer_id for a in store.officers} == {"P1", "P2"}


def test_holding_collapse_keeps_smallest_id(source_dir):
    store = load_directory(source_dir)
    collapsed, dropped = collapse_holding_duplicates(store)
    # C0 and C2 share parent G1 and agree on every field both report
    assert dropped == ["C2"]
    assert "C0" in collapsed.companies and "C2" not in collapsed.companies
    assert all(a.company_id != "C2" for a in collapsed.officers)
    again, dropped_again = collapse_holding_duplicates(collapsed)
    assert dropped_again == [] and again is collapsed


def _mc(cid, day, ebitda=None, name="d"):
    return MatchedCompany(cid, name, day, ebitda=ebitda)


def test_dedupe_keeps_earliest_deal_per_year():
    records = [
        _mc("C1", date(2020, 5, 1), 1.0, "late"),
        _mc("C1", date(2020, 1, 1), 1.0, "early"),
        _mc("C1", date(2021, 1, 1), 1.0, "next year"),
        _mc("C2", date(2020, 5, 1), 1.0),
    ]
    out = dedupe_and_trim(records, trim_fraction=0.0)
    assert [r.dropped for r in out] == ["duplicate", None, None, None]


def test_trim_bounds_and_idempotence():
    records = [_mc(f"C{i:03d}", date(2020, 1, 1), float(i)) for i in range(101)]
    records.append(_mc("X", date(2020, 1, 1), None))
    out = dedupe_and_trim(records, trim_fraction=0.025)
    # linear-interpolation quantiles of 0..100 are 2.5 and 97.5
    dropped = sorted(r.company_id for r in out if r.dropped)
    assert dropped == ["C000", "C001", "C002", "C098", "C099", "C100"]
    assert all(r.dropped == "trim:ebitda" for r in out if r.dropped)
    assert any(r.company_id == "X" for r in kept(out))
    assert dedupe_and_trim(out, trim_fraction=0.025) == out


def test_trim_fraction_validated():
    with pytest.raises(ValueError):
        dedupe_and_trim([], trim_fraction=0.5)
