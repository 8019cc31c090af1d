"""Company feature vectors backdated to an as-of date.

Deal companies are described as of their deal date, everyone else as of a
single snapshot date.  No record dated after the as-of date is consulted.
"""

from __future__ import annotations

import calendar
import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from datetime import date
from typing import Iterable

import numpy as np

from dealscope.dataset import Dataset
from dealscope.ingest import (
    CompanyRecord,
    OfficerAppointment,
    RecordStore,
    dedupe_and_trim,
    kept,
    matched_companies,
)

log = logging.getLogger(__name__)


def signed_log(x):
    """``sign(x) * ln(1 + |x|)``: odd, monotone, defined for every real."""
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.log1p(np.abs(x))


def signed_exp(y):
    y = np.asarray(y, dtype=float)
    return np.sign(y) * np.expm1(np.abs(y))


def year_fraction(start: date, end: date) -> float:
    """Years from ``start`` to ``end``; whole anniversaries count exactly."""
    if end < start:
        return -year_fraction(end, start)
    years = end.year - start.year
    if (end.month, end.day) < (start.month, start.day):
        years -= 1
    anniversary = _add_years(start, years)
    following = _add_years(start, years + 1)
    return years + (end - anniversary).days / (following - anniversary).days


def _add_years(d: date, years: int) -> date:
    year = d.year + years
    day = min(d.day, calendar.monthrange(year, d.month)[1])
    return date(year, d.month, day)


# (name, group, built from, log transformed)
FEATURES = (
    ("company_age_log", "financial", "company_age", True),
    ("turnover_log", "financial", "turnover", True),
    ("turnover_growth", "financial", "turnover_growth", False),
    ("ebitda", "financial", "ebitda", False),
    ("ebitda_margin", "financial", "ebitda_margin", False),
    ("shareholder_funds", "financial", "shareholder_funds", False),
    ("employees", "financial", "employees", False),
    ("liquidity_log", "financial", "liquidity", True),
    ("rose", "financial", "rose", False),
    ("profit_margin", "financial", "profit_margin", False),
    ("asset_turnover_log", "financial", "asset_turnover", True),
    ("long_term_liabilities", "financial", "long_term_liabilities", False),
    ("min_ebitda", "financial", "min_ebitda", False),
    ("min_ebitda_margin", "financial", "min_ebitda_margin", False),
    ("prior_pe_deal", "financial", "prior_pe_deal", False),
    ("n_active_directors", "director", "n_active_directors", False),
    ("n_director_roles_log", "director", "n_roles", True),
    ("avg_tenure", "director", "avg_tenure", False),
    ("avg_age_at_appointment_log", "director", "avg_age_at_appointment", True),
    ("n_previous_companies_log", "director", "avg_previous_companies", True),
    ("experience_in_company_log", "director", "experience_in_company", True),
    ("avg_experience_at_appointment_log", "director", "avg_experience_at_appointment", True),
    ("ftse_experience_1", "director", "ftse_1", False),
    ("ftse_experience_2", "director", "ftse_2", False),
    ("ftse_experience_3plus", "director", "ftse_3plus", False),
)
FEATURE_NAMES = tuple(f[0] for f in FEATURES)
_GROUP = {f[0]: f[1] for f in FEATURES}
MISSING_SUFFIX = "_missing"


def group_of(name: str) -> str:
    base = name[: -len(MISSING_SUFFIX)] if name.endswith(MISSING_SUFFIX) else name
    try:
        return _GROUP[base]
    except KeyError:
        raise ValueError(f"unknown feature column {name!r}") from None


def ftse_bucket(count: int) -> int:
    return min(int(count), 3)


# -- director features ---------------------------------------------------------

@dataclass
class DirectorFeatureSet:
    n_active_directors: int = 0
    n_roles: int = 0
    avg_experience_at_appointment: float | None = None
    avg_previous_companies: float | None = None
    avg_tenure: float | None = None
    cumulative_experience: float = 0.0
    avg_age_at_appointment: float | None = None
    experience_in_company: float | None = None
    ftse_count: int = 0

    @property
    def ftse_1(self) -> int:
        return int(ftse_bucket(self.ftse_count) == 1)

    @property
    def ftse_2(self) -> int:
        return int(ftse_bucket(self.ftse_count) == 2)

    @property
    def ftse_3plus(self) -> int:
        return int(ftse_bucket(self.ftse_count) == 3)


class AppointmentIndex:
    """Appointments grouped by officer and by company."""

    def __init__(self, appointments: Iterable[OfficerAppointment]):
        self.by_officer: dict[str, list[OfficerAppointment]] = defaultdict(list)
        self.by_company: dict[str, list[OfficerAppointment]] = defaultdict(list)
        for appt in appointments:
            self.by_officer[appt.officer_id].append(appt)
            self.by_company[appt.company_id].append(appt)
        for appts in self.by_officer.values():
            appts.sort(key=lambda a: (a.appointed_on, a.company_id))


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def director_features(appointments, company_id: str, as_of: date,
                      ftse_companies=frozenset()) -> DirectorFeatureSet:
    """Management-team features of ``company_id`` as of ``as_of``.

    ``appointments`` is either an iterable of appointments (institutional
    officers already removed) or a prebuilt :class:`AppointmentIndex`.
    An officer is active when appointed on or before ``as_of`` and not
    resigned before it.
    """
    index = appointments if isinstance(appointments, AppointmentIndex) else AppointmentIndex(appointments)
    active = [
        a for a in index.by_company.get(company_id, ())
        if a.appointed_on <= as_of and (a.resigned_on is None or a.resigned_on >= as_of)
    ]
    if not active:
        return DirectorFeatureSet()

    experience, previous, tenure, ages, in_company = [], [], [], [], []
    ftse = 0
    for appt in active:
        history = [h for h in index.by_officer[appt.officer_id] if h.appointed_on <= as_of]
        first = min(h.appointed_on for h in history)
        experience.append(year_fraction(first, appt.appointed_on))
        prior = [h for h in history if h.company_id != company_id and h.appointed_on < appt.appointed_on]
        previous.append(len({h.company_id for h in prior}))
        # tenure accrued up to taking the current role
        spans = [
            year_fraction(h.appointed_on, min(h.resigned_on or appt.appointed_on, appt.appointed_on))
            for h in prior
        ]
        tenure.append(_mean(spans) or 0.0)
        if appt.birth_year is not None:
            ages.append(appt.appointed_on.year - appt.birth_year)
        in_company.append(year_fraction(appt.appointed_on, as_of))
        if any(h.company_id != company_id and h.company_id in ftse_companies for h in history):
            ftse += 1

    return DirectorFeatureSet(
        n_active_directors=len(active),
        n_roles=len({a.title or a.role for a in active}),
        avg_experience_at_appointment=_mean(experience),
        avg_previous_companies=_mean(previous),
        avg_tenure=_mean(tenure),
        cumulative_experience=float(sum(experience)),
        avg_age_at_appointment=_mean(ages),
        experience_in_company=_mean(in_company),
        ftse_count=ftse,
    )


# -- financial features --------------------------------------------------------

@dataclass
class FinancialFeatureSet:
    company_age: float
    turnover: float | None = None
    turnover_growth: float | None = None
    ebitda: float | None = None
    ebitda_margin: float | None = None
    shareholder_funds: float | None = None
    employees: float | None = None
    liquidity: float | None = None
    rose: float | None = None
    profit_margin: float | None = None
    asset_turnover: float | None = None
    long_term_liabilities: float | None = None
    min_ebitda: float | None = None
    min_ebitda_margin: float | None = None


def financial_features(company: CompanyRecord, as_of: date) -> FinancialFeatureSet:
    age = max(year_fraction(company.incorporation_date, as_of), 0.0)
    rows = company.rows_until(as_of)
    if not rows:
        return FinancialFeatureSet(company_age=age)
    latest = rows[-1]
    growth = None
    prev = company.financials_by_year.get(latest.year - 1)
    if prev is not None and latest.turnover is not None and prev.turnover not in (None, 0):
        growth = (latest.turnover - prev.turnover) / abs(prev.turnover)
    recent = rows[-3:]

    def recent_min(name):
        values = [getattr(r, name) for r in recent if getattr(r, name) is not None]
        return min(values) if values else None

    return FinancialFeatureSet(
        company_age=age,
        turnover=latest.turnover,
        turnover_growth=growth,
        ebitda=latest.ebitda,
        ebitda_margin=latest.ebitda_margin,
        shareholder_funds=latest.shareholder_funds,
        employees=None if latest.employees is None else float(latest.employees),
        liquidity=latest.liquidity,
        rose=latest.rose,
        profit_margin=latest.profit_margin,
        asset_turnover=latest.asset_turnover,
        long_term_liabilities=latest.long_term_liabilities,
        min_ebitda=recent_min("ebitda"),
        min_ebitda_margin=recent_min("ebitda_margin"),
    )


def feature_row(fin: FinancialFeatureSet, dirs: DirectorFeatureSet, prior_pe_deal: bool) -> np.ndarray:
    """Raw feature vector in :data:`FEATURE_NAMES` order; NaN marks missing."""
    source = {**asdict(fin), **asdict(dirs),
              "ftse_1": dirs.ftse_1, "ftse_2": dirs.ftse_2, "ftse_3plus": dirs.ftse_3plus,
              "n_roles": dirs.n_roles, "prior_pe_deal": float(prior_pe_deal)}
    out = np.empty(len(FEATURES))
    for j, (_, _, key, logged) in enumerate(FEATURES):
        value = source[key]
        if value is None:
            out[j] = math.nan
        else:
            out[j] = float(signed_log(value)) if logged else float(value)
    return out


# -- imputation ------------------------------------------------------------------

class ImputationError(ValueError):
    pass


@dataclass
class ImputationPolicy:
    strategy: str = "median"
    add_missing_indicators: bool = True

    def __post_init__(self):
        if self.strategy not in ("median", "zero"):
            raise ValueError(f"unknown imputation strategy {self.strategy!r}")


@dataclass
class Imputer:
    """Fill values and indicator columns learned from training rows."""

    policy: ImputationPolicy
    feature_names: list[str]
    fill: list[float] = field(default_factory=list)
    indicator_columns: list[int] = field(default_factory=list)

    @classmethod
    def fit(cls, data: Dataset, policy: ImputationPolicy) -> "Imputer":
        X = data.X
        missing = np.isnan(X)
        fill = []
        for j, name in enumerate(data.feature_names):
            observed = X[~missing[:, j], j]
            if observed.size == 0:
                raise ImputationError(f"column {name!r} has no observed values in the fitting rows")
            fill.append(float(np.median(observed)) if policy.strategy == "median" else 0.0)
        indicators = [j for j in range(X.shape[1]) if missing[:, j].any()] if policy.add_missing_indicators else []
        return cls(policy, list(data.feature_names), fill, indicators)

    def transform(self, data: Dataset) -> Dataset:
        if list(data.feature_names) != self.feature_names:
            raise ValueError("dataset columns differ from the columns the imputer was fitted on")
        X = data.X
        missing = np.isnan(X)
        filled = np.where(missing, np.asarray(self.fill)[None, :], X)
        names = list(data.feature_names)
        groups = list(data.groups)
        if self.indicator_columns:
            filled = np.hstack([filled, missing[:, self.indicator_columns].astype(float)])
            names += [data.feature_names[j] + MISSING_SUFFIX for j in self.indicator_columns]
            groups += [data.groups[j] for j in self.indicator_columns]
        return data.with_X(filled, names, groups)

    def to_dict(self) -> dict:
        return {
            "strategy": self.policy.strategy,
            "add_missing_indicators": self.policy.add_missing_indicators,
            "columns": self.feature_names,
            "fill": dict(zip(self.feature_names, self.fill)),
            "indicators": [self.feature_names[j] for j in self.indicator_columns],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "Imputer":
        policy = ImputationPolicy(payload["strategy"], payload["add_missing_indicators"])
        names = list(payload["columns"])
        return cls(policy, names, [payload["fill"][n] for n in names],
                   [names.index(n) for n in payload["indicators"]])


# -- dataset assembly ------------------------------------------------------------

@dataclass
class AssemblyReport:
    snapshot_date: date
    n_rows: int
    n_positive: int
    matched_records: int
    dropped: dict[str, int]
    excluded_companies: list[str]


def latest_period_end(store: RecordStore) -> date:
    ends = [r.period_end for c in store.companies.values() for r in c.financials_by_year.values()]
    if not ends:
        raise ValueError("no financial rows in the store; pass snapshot_date explicitly")
    return max(ends)


def assemble_dataset(store: RecordStore, matches, policy: ImputationPolicy | None = None,
                     snapshot_date: date | None = None, window_start: date | None = None,
                     trim_fraction: float = 0.025):
    """Build one raw (unimputed) row per company.

    A company is labelled positive when a kept matched deal falls on or
    after ``window_start``; its row is computed as of the earliest such
    deal.  Every other company is described as of ``snapshot_date``.
    ``prior_pe_deal`` flags a matched deal strictly before the as-of date.
    Companies whose only window deals were trimmed as outliers are left
    out.  Returns ``(dataset, imputer, report)`` where the imputer is
    fitted on all rows; evaluation refits it per training fold.
    """
    policy = policy or ImputationPolicy()
    snapshot = snapshot_date or latest_period_end(store)
    records = dedupe_and_trim(matched_companies(store, matches), trim_fraction)
    in_window = [r for r in records if window_start is None or r.deal_date >= window_start]
    kept_deal: dict[str, date] = {}
    for rec in kept(in_window):
        if rec.company_id not in kept_deal or rec.deal_date < kept_deal[rec.company_id]:
            kept_deal[rec.company_id] = rec.deal_date
    trimmed_only = sorted({r.company_id for r in in_window} - set(kept_deal))
    all_deals: dict[str, list[date]] = defaultdict(list)
    for rec in records:
        all_deals[rec.company_id].append(rec.deal_date)

    index = AppointmentIndex(store.officers)
    ftse = frozenset(cid for cid, c in store.companies.items() if c.is_ftse)
    excluded = set(trimmed_only)
    ids, rows, labels = [], [], []
    for cid in sorted(store.companies):
        if cid in excluded:
            continue
        company = store.companies[cid]
        as_of = kept_deal.get(cid, snapshot)
        if as_of < company.incorporation_date:
            excluded.add(cid)
            continue
        prior = any(d < as_of for d in all_deals.get(cid, ()))
        row = feature_row(financial_features(company, as_of),
                          director_features(index, cid, as_of, ftse), prior)
        ids.append(cid)
        rows.append(row)
        labels.append(int(cid in kept_deal))

    X = np.array(rows, dtype=float).reshape(len(rows), len(FEATURES))
    data = Dataset(X, np.array(labels), list(FEATURE_NAMES), [f[1] for f in FEATURES],
                   np.array(ids, dtype=object))
    imputer = Imputer.fit(data, policy)
    dropped: dict[str, int] = defaultdict(int)
    for rec in records:
        if rec.dropped:
            dropped[rec.dropped] += 1
    report = AssemblyReport(snapshot, data.n_rows, data.n_positive, len(records), dict(dropped),
                            sorted(excluded))
    log.info("assembled %d rows (%d positive) as of %s", data.n_rows, data.n_positive, snapshot)
    return data, imputer, report


def describe_columns() -> list[dict]:
    return [{"name": name, "group": group, "source": key,
             "transform": "signed_log" if logged else "identity"}
            for name, group, key, logged in FEATURES]
