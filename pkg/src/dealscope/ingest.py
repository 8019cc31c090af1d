"""Loading and cleaning of the registry, financials, officer and deal tables.

All four sources are UTF-8 CSV with ISO-8601 dates; the column layouts are
documented in ``docs/schemas.md``.  Rows that fail to parse are rejected
individually and recorded once each in the store's error log; a missing
required column aborts the load.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import re
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable

import numpy as np

log = logging.getLogger(__name__)

FINANCIAL_FIELDS = (
    "turnover",
    "ebitda",
    "ebitda_margin",
    "shareholder_funds",
    "employees",
    "liquidity",
    "rose",
    "profit_margin",
    "asset_turnover",
    "long_term_liabilities",
)

COMPANY_COLUMNS = ("company_id", "name", "city", "incorporation_date", "is_ftse", "parent_id")
FINANCIAL_COLUMNS = ("company_id", "period_end") + FINANCIAL_FIELDS
OFFICER_COLUMNS = (
    "officer_id", "company_id", "role", "title", "appointed_on", "resigned_on",
    "birth_year", "is_institutional",
)
DEAL_COLUMNS = (
    "deal_name", "deal_date", "country", "region", "city", "deal_value", "industry", "equity_lead",
)

# columns a file may omit; everything else is required
OPTIONAL_COLUMNS = {"is_ftse", "parent_id", "title", "birth_year", "resigned_on"}

ROLES = ("director", "secretary", "other")


class SchemaError(ValueError):
    """A source file is missing a required column or cannot be read."""


class RowError(ValueError):
    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail


@dataclass(frozen=True)
class RejectedRow:
    source: str
    line: int
    reason: str
    detail: str

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


@dataclass(frozen=True)
class FinancialRow:
    period_end: date
    turnover: float | None = None
    ebitda: float | None = None
    ebitda_margin: float | None = None
    shareholder_funds: float | None = None
    employees: int | None = None
    liquidity: float | None = None
    rose: float | None = None
    profit_margin: float | None = None
    asset_turnover: float | None = None
    long_term_liabilities: float | None = None

    @property
    def year(self) -> int:
        return self.period_end.year

    def values(self) -> tuple:
        return tuple(getattr(self, name) for name in FINANCIAL_FIELDS)


@dataclass
class CompanyRecord:
    company_id: str
    name: str
    city: str
    incorporation_date: date
    is_ftse: bool = False
    parent_id: str | None = None
    financials_by_year: dict[int, FinancialRow] = field(default_factory=dict)

    def rows_until(self, as_of: date) -> list[FinancialRow]:
        """Financial rows with ``period_end <= as_of``, oldest first."""
        rows = [r for r in self.financials_by_year.values() if r.period_end <= as_of]
        return sorted(rows, key=lambda r: r.period_end)


@dataclass(frozen=True)
class OfficerAppointment:
    officer_id: str
    company_id: str
    role: str
    appointed_on: date
    resigned_on: date | None = None
    birth_year: int | None = None
    is_institutional: bool = False
    title: str = ""


@dataclass(frozen=True)
class DealValue:
    """Deal equity value in millions: an exact amount or a non-disclosed band."""

    amount: float | None = None
    low: float | None = None
    high: float | None = None

    @property
    def is_band(self) -> bool:
        return self.amount is None and (self.low is not None or self.high is not None)

    def __str__(self) -> str:
        if self.amount is not None:
            return f"{self.amount:g}"
        if self.low is None and self.high is not None:
            return f"n/d (<{self.high:g}m)"
        if self.is_band:
            return f"n/d ({self.low:g} - {self.high:g}m)"
        return ""


@dataclass(frozen=True)
class DealRecord:
    deal_name: str
    deal_date: date
    country: str
    region: str
    city: str
    deal_value: DealValue
    industry: str
    equity_lead: str


@dataclass
class RecordStore:
    companies: dict[str, CompanyRecord]
    officers: list[OfficerAppointment]
    deals: list[DealRecord]
    errors: list[RejectedRow] = field(default_factory=list)

    def counts(self) -> dict[str, int]:
        return {
            "companies": len(self.companies),
            "financial_rows": sum(len(c.financials_by_year) for c in self.companies.values()),
            "officers": len(self.officers),
            "deals": len(self.deals),
            "rejected_rows": len(self.errors),
        }

    def appointments_by_officer(self) -> dict[str, list[OfficerAppointment]]:
        out: dict[str, list[OfficerAppointment]] = defaultdict(list)
        for appt in self.officers:
            out[appt.officer_id].append(appt)
        return out

    def appointments_by_company(self) -> dict[str, list[OfficerAppointment]]:
        out: dict[str, list[OfficerAppointment]] = defaultdict(list)
        for appt in self.officers:
            out[appt.company_id].append(appt)
        return out


# -- field parsers -----------------------------------------------------------

def parse_date(text: str) -> date:
    try:
        return date.fromisoformat(text.strip())
    except ValueError:
        raise RowError("bad_date", repr(text)) from None


def parse_optional_date(text: str | None) -> date | None:
    if text is None or not text.strip():
        return None
    return parse_date(text)


def parse_optional_float(text: str | None) -> float | None:
    if text is None or not text.strip():
        return None
    try:
        value = float(text.replace(",", ""))
    except ValueError:
        raise RowError("bad_number", repr(text)) from None
    if not np.isfinite(value):
        raise RowError("bad_number", repr(text))
    return value


def parse_optional_int(text: str | None) -> int | None:
    value = parse_optional_float(text)
    if value is None:
        return None
    if value != int(value):
        raise RowError("bad_number", f"expected integer, got {text!r}")
    return int(value)


_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n", ""}


def parse_bool(text: str | None) -> bool:
    value = (text or "").strip().lower()
    if value in _TRUE:
        return True
    if value in _FALSE:
        return False
    raise RowError("bad_boolean", repr(text))


_BAND = re.compile(
    r"^n/?d\s*\(\s*(?:<\s*(?P<upper>\d+(?:\.\d+)?)|(?P<low>\d+(?:\.\d+)?)\s*-\s*(?P<high>\d+(?:\.\d+)?))"
    r"\s*(?:£|\\textsterling)?\s*(?:£)?m?\s*\)$",
    re.IGNORECASE,
)


def parse_deal_value(text: str | None) -> DealValue:
    """Parse ``"23.5"``, ``"n/d (25 - 50m)"``, ``"n/d (<25£m)"`` or blank."""
    value = (text or "").strip()
    if not value:
        return DealValue()
    match = _BAND.match(value)
    if match:
        if match.group("upper") is not None:
            return DealValue(high=float(match.group("upper")))
        return DealValue(low=float(match.group("low")), high=float(match.group("high")))
    try:
        amount = float(value.replace(",", "").rstrip("mM").lstrip("£"))
    except ValueError:
        raise RowError("bad_deal_value", repr(text)) from None
    return DealValue(amount=amount)


# -- loading -----------------------------------------------------------------

def _rows(path: Path, expected: Iterable[str]):
    path = Path(path)
    if not path.is_file():
        raise SchemaError(f"{path}: file not found")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in expected if c not in header and c not in OPTIONAL_COLUMNS]
        if missing:
            raise SchemaError(f"{path}: missing required column(s) {', '.join(missing)}")
        # line 1 is the header
        for line, row in enumerate(reader, start=2):
            yield line, row


def _required(row: dict, key: str) -> str:
    value = (row.get(key) or "").strip()
    if not value:
        raise RowError("missing_value", key)
    return value


def _load_companies(path, errors):
    companies: dict[str, CompanyRecord] = {}
    for line, row in _rows(path, COMPANY_COLUMNS):
        try:
            cid = _required(row, "company_id")
            if cid in companies:
                raise RowError("duplicate_id", cid)
            companies[cid] = CompanyRecord(
                company_id=cid,
                name=_required(row, "name"),
                city=(row.get("city") or "").strip().lower(),
                incorporation_date=parse_date(_required(row, "incorporation_date")),
                is_ftse=parse_bool(row.get("is_ftse")),
                parent_id=(row.get("parent_id") or "").strip() or None,
            )
        except RowError as exc:
            errors.append(RejectedRow(Path(path).name, line, exc.reason, exc.detail))
    return companies


def _load_financials(path, companies, errors):
    for line, row in _rows(path, FINANCIAL_COLUMNS):
        try:
            cid = _required(row, "company_id")
            company = companies.get(cid)
            if company is None:
                raise RowError("unknown_company", cid)
            period_end = parse_date(_required(row, "period_end"))
            if period_end < company.incorporation_date:
                raise RowError("before_incorporation", f"{cid} {period_end}")
            values = {}
            for name in FINANCIAL_FIELDS:
                parse = parse_optional_int if name == "employees" else parse_optional_float
                values[name] = parse(row.get(name))
            if values["employees"] is not None and values["employees"] < 0:
                raise RowError("negative_employees", str(values["employees"]))
            if period_end.year in company.financials_by_year:
                raise RowError("duplicate_year", f"{cid} {period_end.year}")
            company.financials_by_year[period_end.year] = FinancialRow(period_end, **values)
        except RowError as exc:
            errors.append(RejectedRow(Path(path).name, line, exc.reason, exc.detail))


def _load_officers(path, companies, errors):
    officers = []
    for line, row in _rows(path, OFFICER_COLUMNS):
        try:
            cid = _required(row, "company_id")
            if cid not in companies:
                raise RowError("unknown_company", cid)
            role = _required(row, "role").lower()
            if role not in ROLES:
                raise RowError("bad_role", role)
            appointed = parse_date(_required(row, "appointed_on"))
            resigned = parse_optional_date(row.get("resigned_on"))
            if resigned is not None and resigned < appointed:
                raise RowError("date_order", f"resigned {resigned} before appointed {appointed}")
            officers.append(OfficerAppointment(
                officer_id=_required(row, "officer_id"),
                company_id=cid,
                role=role,
                appointed_on=appointed,
                resigned_on=resigned,
                birth_year=parse_optional_int(row.get("birth_year")),
                is_institutional=parse_bool(row.get("is_institutional")),
                title=(row.get("title") or "").strip().lower(),
            ))
        except RowError as exc:
            errors.append(RejectedRow(Path(path).name, line, exc.reason, exc.detail))
    return officers


def _load_deals(path, errors):
    deals = []
    for line, row in _rows(path, DEAL_COLUMNS):
        try:
            deals.append(DealRecord(
                deal_name=_required(row, "deal_name"),
                deal_date=parse_date(_required(row, "deal_date")),
                country=(row.get("country") or "").strip(),
                region=(row.get("region") or "").strip(),
                city=(row.get("city") or "").strip().lower(),
                deal_value=parse_deal_value(row.get("deal_value")),
                industry=(row.get("industry") or "").strip(),
                equity_lead=(row.get("equity_lead") or "").strip(),
            ))
        except RowError as exc:
            errors.append(RejectedRow(Path(path).name, line, exc.reason, exc.detail))
    return deals


def load_sources(deals_csv, companies_csv, financials_csv, officers_csv) -> RecordStore:
    errors: list[RejectedRow] = []
    # header checks first so a schema problem aborts before any row work
    for path, cols in ((deals_csv, DEAL_COLUMNS), (companies_csv, COMPANY_COLUMNS),
                       (financials_csv, FINANCIAL_COLUMNS), (officers_csv, OFFICER_COLUMNS)):
        next(iter(_rows(path, cols)), None)
    companies = _load_companies(companies_csv, errors)
    _load_financials(financials_csv, companies, errors)
    officers = _load_officers(officers_csv, companies, errors)
    deals = _load_deals(deals_csv, errors)
    store = RecordStore(companies, officers, deals, errors)
    log.info("loaded %s", store.counts())
    return store


def load_directory(directory) -> RecordStore:
    directory = Path(directory)
    return load_sources(directory / "deals.csv", directory / "companies.csv",
                        directory / "financials.csv", directory / "officers.csv")


def write_error_log(errors: Iterable[RejectedRow], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for err in errors:
            fh.write(err.to_json() + "\n")


# -- cleaning ----------------------------------------------------------------

def remove_institutional_officers(store: RecordStore) -> RecordStore:
    kept = [a for a in store.officers if not a.is_institutional]
    removed = len(store.officers) - len(kept)
    log.info("removed %d institutional officer appointments", removed)
    return dataclasses.replace(store, officers=kept)


def collapse_holding_duplicates(store: RecordStore) -> tuple[RecordStore, list[str]]:
    """Keep one company per group of parent-linked records with equal financials.

    Two companies sharing a ``parent_id`` are duplicates when their filed
    years coincide and every field present in both rows agrees.  The
    smallest ``company_id`` of each duplicate group survives.
    """
    groups: dict[str, list[CompanyRecord]] = defaultdict(list)
    for company in store.companies.values():
        if company.parent_id:
            groups[company.parent_id].append(company)

    dropped: list[str] = []
    for members in groups.values():
        members.sort(key=lambda c: c.company_id)
        survivors: list[CompanyRecord] = []
        for company in members:
            if any(_same_financials(company, kept) for kept in survivors):
                dropped.append(company.company_id)
            else:
                survivors.append(company)
    if not dropped:
        return store, []
    drop = set(dropped)
    companies = {cid: c for cid, c in store.companies.items() if cid not in drop}
    officers = [a for a in store.officers if a.company_id not in drop]
    log.info("collapsed %d holding-company duplicates", len(dropped))
    return dataclasses.replace(store, companies=companies, officers=officers), sorted(dropped)


def _same_financials(a: CompanyRecord, b: CompanyRecord) -> bool:
    if not a.financials_by_year or set(a.financials_by_year) != set(b.financials_by_year):
        return False
    for year, row_a in a.financials_by_year.items():
        row_b = b.financials_by_year[year]
        for va, vb in zip(row_a.values(), row_b.values()):
            if va is not None and vb is not None and va != vb:
                return False
    return True


TRIM_FIELDS = ("ebitda", "turnover", "shareholder_funds")


@dataclass(frozen=True)
class MatchedCompany:
    """A deal linked to a registry company, with financials as of the deal date."""

    company_id: str
    deal_name: str
    deal_date: date
    ebitda: float | None = None
    turnover: float | None = None
    shareholder_funds: float | None = None
    dropped: str | None = None


def latest_row(company: CompanyRecord, as_of: date) -> FinancialRow | None:
    rows = company.rows_until(as_of)
    return rows[-1] if rows else None


def matched_companies(store: RecordStore, matches) -> list[MatchedCompany]:
    """One record per (deal row, accepted link)."""
    linked = {m.deal_name: m.company_id for m in matches if m.accepted}
    out = []
    for deal in store.deals:
        cid = linked.get(deal.deal_name)
        if cid is None or cid not in store.companies:
            continue
        row = latest_row(store.companies[cid], deal.deal_date)
        out.append(MatchedCompany(
            company_id=cid,
            deal_name=deal.deal_name,
            deal_date=deal.deal_date,
            ebitda=row.ebitda if row else None,
            turnover=row.turnover if row else None,
            shareholder_funds=row.shareholder_funds if row else None,
        ))
    return out


def dedupe_and_trim(matched: list[MatchedCompany], trim_fraction: float = 0.025) -> list[MatchedCompany]:
    """Flag same-year duplicates and financial outliers among matched records.

    Returns every input record, with ``dropped`` set to ``"duplicate"`` or
    ``"trim:<field>"`` for removed ones; use :func:`kept` to filter.  Within
    a (company, deal year) group the earliest deal is kept.  Trim bounds
    are the ``trim_fraction`` and ``1 - trim_fraction`` quantiles (linear
    interpolation) of each field's non-missing values among non-duplicate
    records; strictly exceeding either bound for any field drops the
    record.  Bounds are computed from the same population on every call,
    so re-applying the function changes nothing.
    """
    if not 0.0 <= trim_fraction < 0.5:
        raise ValueError(f"trim_fraction must be in [0, 0.5), got {trim_fraction}")

    order = sorted(range(len(matched)),
                   key=lambda i: (matched[i].company_id, matched[i].deal_date, matched[i].deal_name, i))
    duplicate = [False] * len(matched)
    seen: set[tuple[str, int]] = set()
    for i in order:
        key = (matched[i].company_id, matched[i].deal_date.year)
        if key in seen:
            duplicate[i] = True
        else:
            seen.add(key)

    reasons: list[str | None] = ["duplicate" if d else None for d in duplicate]
    if trim_fraction > 0:
        for name in TRIM_FIELDS:
            values = np.array([
                getattr(m, name) for m, dup in zip(matched, duplicate)
                if not dup and getattr(m, name) is not None
            ], dtype=float)
            if values.size == 0:
                continue
            lower, upper = np.quantile(values, [trim_fraction, 1.0 - trim_fraction])
            for i, m in enumerate(matched):
                value = getattr(m, name)
                if reasons[i] is None and value is not None and (value < lower or value > upper):
                    reasons[i] = f"trim:{name}"
    return [dataclasses.replace(m, dropped=r) for m, r in zip(matched, reasons)]


def kept(records: Iterable[MatchedCompany]) -> list[MatchedCompany]:
    return [r for r in records if r.dropped is None]
