"""Seeded synthetic registry, financial, officer and deal files with a planted label.

Every company gets a latent state (age, size, profitability, growth and a
management-quality score) from which its accounts and board are drawn.
Summary statistics of the published data serve as calibration targets:
marginals are drawn by stratified inverse-CDF sampling and then matched
to the target median and mean exactly.

The investment label is a logistic function of what the pipeline will be
able to observe (latest accounts, board composition, company age), never of
names, so linkage and labelling are independent channels.  Deal names are
registry names sent through a corruption channel: legal-suffix changes plus
random character edits.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from bisect import bisect_right
from dataclasses import asdict, dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from dealscope.features import year_fraction
from dealscope.seeding import derive_seed

log = logging.getLogger(__name__)

LEGAL_SUFFIXES = ("Limited", "Ltd", "Ltd.", "PLC", "LLP", "Group", "Holdings", "Group Limited",
                  "Holdings Limited", "(UK) Limited", "UK Ltd", "Company Limited")

CITIES = (
    ("london", "London", 26), ("manchester", "North West", 7), ("birmingham", "West Midlands", 6),
    ("leeds", "Yorkshire", 5), ("glasgow", "Scotland", 4), ("edinburgh", "Scotland", 4),
    ("bristol", "South West", 4), ("liverpool", "North West", 3), ("sheffield", "Yorkshire", 3),
    ("newcastle", "North East", 3), ("nottingham", "East Midlands", 3), ("cambridge", "East", 3),
    ("oxford", "South East", 3), ("reading", "South East", 3), ("cardiff", "Wales", 3),
    ("leicester", "East Midlands", 2), ("southampton", "South East", 2), ("brighton", "South East", 2),
    ("aberdeen", "Scotland", 2), ("belfast", "Northern Ireland", 2), ("norwich", "East", 2),
    ("york", "Yorkshire", 1), ("exeter", "South West", 1), ("coventry", "West Midlands", 1),
    ("milton keynes", "South East", 1), ("derby", "East Midlands", 1), ("swansea", "Wales", 1),
    ("guildford", "South East", 1), ("bath", "South West", 1), ("dundee", "Scotland", 1),
)

INDUSTRIES = (
    ("Engineering", "Industrials"), ("Logistics", "Industrials"), ("Foods", "Consumer"),
    ("Software", "Technology"), ("Systems", "Technology"), ("Analytics", "Technology"),
    ("Healthcare", "Healthcare"), ("Pharma", "Healthcare"), ("Retail", "Consumer"),
    ("Leisure", "Consumer"), ("Energy", "Energy"), ("Consulting", "Business services"),
    ("Recruitment", "Business services"), ("Media", "Media"), ("Construction", "Industrials"),
    ("Packaging", "Industrials"), ("Finance", "Financials"), ("Insurance Services", "Financials"),
    ("Marine", "Industrials"), ("Security", "Business services"), ("Brands", "Consumer"),
    ("Labs", "Healthcare"), ("Digital", "Technology"), ("Environmental", "Utilities"),
    ("Property", "Real estate"), ("Travel", "Consumer"), ("Education", "Business services"),
    ("Telecom", "Telecoms"), ("Automotive", "Industrials"), ("Interiors", "Consumer"),
)

EQUITY_LEADS = ("Northgate Capital", "Albion Partners", "Harbour Equity", "Thistle Growth",
                "Meridian Private Equity", "Castlegate Investors", "Pennine Ventures",
                "Kestrel Capital", "Granite Bridge Partners", "Summit Lane Equity")

TITLES = (("director", 40), ("managing director", 12), ("finance director", 10),
          ("chief executive", 8), ("chairman", 7), ("operations director", 7),
          ("sales director", 6), ("technical director", 5), ("non-executive director", 5))

_ONSETS = ("b", "br", "c", "ch", "cl", "d", "dr", "f", "g", "gr", "h", "k", "l", "m", "n", "p",
           "pr", "r", "s", "st", "t", "tr", "v", "w", "z", "th", "sh", "bl")
_VOWELS = ("a", "e", "i", "o", "u", "ai", "ea", "io", "ou", "y")
_CODAS = ("", "", "n", "r", "s", "x", "l", "m", "th", "ck", "nd", "rt")


# -- configuration ---------------------------------------------------------------

@dataclass
class NameCorruption:
    suffix_rate: float = 0.5     # probability the legal suffix is dropped, added or swapped
    edit_rate: float = 0.05      # per-character probability of an edit in the distinctive part
    substitute: float = 0.5      # edit-operation mix
    delete: float = 0.25
    insert: float = 0.25


@dataclass
class SignalSpec:
    """Weights of the planted log-odds terms (standardised units).

    Signs follow the published logistic-regression table where it has a
    clear direction: younger companies and larger role breadth raise the
    odds, more active directors lower them.
    """

    scale: float = 2.2
    age: float = -0.9
    size: float = 0.5
    ebitda_band: float = 0.3
    growth: float = 0.5
    loss_history: float = -0.4
    roles: float = 0.25
    experience: float = 0.2
    previous_companies: float = 0.2
    active_directors: float = -0.15
    ftse_one: float = 0.3
    young_experienced: float = 0.3
    experienced_profitable: float = 0.7
    employees: float = 0.45
    liquidity: float = 0.45
    rose: float = 0.45
    profit_margin: float = 0.45
    shareholder_funds: float = 0.45
    asset_turnover: float = -0.45


@dataclass
class CalibrationTargets:
    turnover_median: float = 11847.0
    turnover_mean: float = 40530.0
    ebitda_median: float = 789.0
    ebitda_mean: float = 1813.0
    profit_margin_median: float = 4.25
    profit_margin_mean: float = 2.68
    shareholder_funds_median: float = 1528.0
    shareholder_funds_mean: float = 8166.0
    turnover_missing: float = 0.5001
    ebitda_missing: float = 0.4593
    profit_margin_missing: float = 0.5752
    shareholder_funds_missing: float = 0.1681
    directors_median: float = 4.0
    directors_mean: float = 4.47
    deal_value_min: float = 5.0
    deal_value_q1: float = 7.765
    deal_value_median: float = 14.0
    deal_value_mean: float = 23.462
    deal_value_q3: float = 30.0
    deal_value_max: float = 100.0
    deal_value_undisclosed: float = 0.46
    deal_band_shares: tuple = (0.629, 0.228, 0.143)


@dataclass
class GeneratorConfig:
    n_companies: int = 20000
    positive_rate: float = 0.0083
    seed: int = 0
    snapshot_year: int = 2019
    financial_years: int = 5
    prior_deal_rate: float = 0.02
    unmatched_deal_fraction: float = 0.2
    duplicate_deal_rate: float = 0.05
    holding_duplicate_rate: float = 0.01
    city_mismatch_rate: float = 0.02
    ftse_rate: float = 0.01
    ftse_prior_preference: float = 0.01
    agency_appointments: int = 200
    name_corruption: NameCorruption = field(default_factory=NameCorruption)
    signal: SignalSpec = field(default_factory=SignalSpec)
    calibration: CalibrationTargets = field(default_factory=CalibrationTargets)

    def validate(self) -> None:
        if self.n_companies < 10:
            raise ValueError("n_companies must be at least 10")
        if not 0.0 < self.positive_rate < 1.0:
            raise ValueError("positive_rate must lie in (0, 1)")
        for name in ("prior_deal_rate", "duplicate_deal_rate", "holding_duplicate_rate",
                     "city_mismatch_rate", "ftse_rate", "ftse_prior_preference"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        if not 0.0 <= self.unmatched_deal_fraction < 1.0:
            raise ValueError("unmatched_deal_fraction must lie in [0, 1)")
        nc = self.name_corruption
        if not (0 <= nc.suffix_rate <= 1 and 0 <= nc.edit_rate < 1):
            raise ValueError("corruption rates must lie in [0, 1]")
        if min(nc.substitute, nc.delete, nc.insert) < 0 or nc.substitute + nc.delete + nc.insert <= 0:
            raise ValueError("edit-operation weights must be nonnegative and not all zero")
        c = self.calibration
        _deal_value_knots(c)  # raises when the quantile targets are inconsistent
        if c.directors_median < 1 or c.directors_mean < 1:
            raise ValueError("director-count targets must be at least 1")
        for name in ("turnover", "ebitda", "profit_margin", "shareholder_funds"):
            rate = getattr(c, f"{name}_missing")
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"{name}_missing must lie in [0, 1)")
        if not 0 <= c.deal_value_undisclosed < 1 or abs(sum(c.deal_band_shares) - 1) > 1e-6:
            raise ValueError("deal band shares must sum to 1")

    @classmethod
    def from_dict(cls, payload: dict) -> "GeneratorConfig":
        payload = dict(payload or {})
        nested = {"name_corruption": NameCorruption, "signal": SignalSpec,
                  "calibration": CalibrationTargets}
        kwargs = {}
        known = {f for f in cls.__dataclass_fields__}
        for key, value in payload.items():
            if key not in known:
                raise ValueError(f"unknown synth setting {key!r}")
            if key in nested:
                sub = nested[key]
                bad = set(value) - set(sub.__dataclass_fields__)
                if bad:
                    raise ValueError(f"unknown {key} setting(s): {sorted(bad)}")
                if key == "calibration" and "deal_band_shares" in value:
                    value = {**value, "deal_band_shares": tuple(value["deal_band_shares"])}
                kwargs[key] = sub(**value)
            else:
                kwargs[key] = value
        return cls(**kwargs)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["calibration"]["deal_band_shares"] = list(self.calibration.deal_band_shares)
        return out


# -- calibrated sampling -----------------------------------------------------------

def stratified_uniform(rng: np.random.Generator, n: int) -> np.ndarray:
    """One uniform draw inside each of n equal strata, in random order."""
    return (rng.permutation(n) + rng.random(n)) / n


def affine_calibrate(values: np.ndarray, median: float, mean: float,
                     observed: np.ndarray | None = None) -> np.ndarray:
    """``median + s * (values - median(values))`` with ``s > 0`` chosen to hit ``mean``.

    Statistics are taken over the ``observed`` entries when a mask is
    given, so the targets hold for what a reader of the files sees.  Ranks
    are preserved.  Raises when the skew of ``values`` points the wrong way
    for the requested mean.
    """
    ref = values if observed is None else values[observed]
    med = float(np.median(ref))
    gap = float(np.mean(ref)) - med
    want = mean - median
    if gap == 0.0 or want == 0.0 or (gap > 0) != (want > 0):
        raise ValueError(f"cannot calibrate to median {median} and mean {mean} from this shape")
    return median + (want / gap) * (values - med)


def _deal_value_knots(c: CalibrationTargets):
    """Piecewise-linear quantile function through the published quartiles.

    A knot at the 0.9 quantile is placed so that the distribution mean hits
    the target; it must fall between the third quartile and the maximum.
    """
    qs = [c.deal_value_min, c.deal_value_q1, c.deal_value_median, c.deal_value_q3]
    if any(b < a for a, b in zip(qs, qs[1:])) or c.deal_value_max < c.deal_value_q3:
        raise ValueError("deal value quantile targets must be nondecreasing (min <= q1 <= median <= q3 <= max)")
    base = 0.25 * sum((a + b) / 2 for a, b in zip(qs, qs[1:]))
    # remaining mass: 0.15 on [q3, x] and 0.1 on [x, max]
    x = (c.deal_value_mean - base - 0.075 * c.deal_value_q3 - 0.05 * c.deal_value_max) / 0.125
    if not c.deal_value_q3 <= x <= c.deal_value_max:
        raise ValueError(f"deal value mean {c.deal_value_mean} is infeasible with the given quartiles")
    return np.array([0.0, 0.25, 0.5, 0.75, 0.9, 1.0]), np.array(qs + [x, c.deal_value_max])


def director_pmf(median: float, mean: float, cap: int = 134) -> np.ndarray:
    """PMF over 1..cap: one plus a negative binomial whose dispersion is tuned to the median."""
    from scipy.stats import nbinom

    mu = mean - 1.0
    k = np.arange(cap)
    best = None
    for r in np.linspace(0.3, 40.0, 400):
        p = r / (r + mu)
        pmf = nbinom.pmf(k, r, p)
        pmf /= pmf.sum()
        cdf = np.cumsum(pmf)
        med = 1 + int(np.searchsorted(cdf, 0.5))
        if med == int(round(median)):
            gap = abs(cdf[med - 1] - 0.5)  # keep the median away from a stratum boundary
            if best is None or gap > best[0]:
                best = (gap, pmf)
    if best is None:
        raise ValueError(f"no director-count distribution has median {median} and mean {mean}")
    return best[1]


def sample_discrete(pmf: np.ndarray, u: np.ndarray, offset: int = 1) -> np.ndarray:
    return offset + np.searchsorted(np.cumsum(pmf), u, side="right").clip(0, len(pmf) - 1)


# -- names ---------------------------------------------------------------------------

def _stem(rng) -> str:
    parts = []
    for _ in range(int(rng.integers(2, 4))):
        parts.append(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))])
    parts.append(_CODAS[rng.integers(len(_CODAS))])
    return "".join(parts).capitalize()


def _base_name(rng, industry: str) -> str:
    style = rng.random()
    if style < 0.55:
        return f"{_stem(rng)} {industry}"
    if style < 0.75:
        return _stem(rng)
    if style < 0.9:
        return f"{_stem(rng)} & {_stem(rng)}"
    return f"{_stem(rng)} {industry} Services"


def corrupt_name(base: str, suffix: str, rng, spec: NameCorruption) -> str:
    """A deal-table spelling of a registry name.

    The legal suffix is dropped, added or swapped with probability
    ``suffix_rate``; each character of the distinctive part is then edited
    with probability ``edit_rate``.
    """
    if rng.random() < spec.suffix_rate:
        choice = rng.random()
        if choice < 0.4:
            suffix = ""
        else:
            suffix = LEGAL_SUFFIXES[rng.integers(len(LEGAL_SUFFIXES))]
    chars = list(base)
    out = []
    weights = np.array([spec.substitute, spec.delete, spec.insert], dtype=float)
    weights /= weights.sum()
    letters = "abcdefghijklmnopqrstuvwxyz"
    for ch in chars:
        if ch.isalpha() and rng.random() < spec.edit_rate:
            op = rng.choice(3, p=weights)
            new = letters[rng.integers(26)]
            if op == 0:
                out.append(new.upper() if ch.isupper() else new)
            elif op == 2:
                out.extend([ch, new])
            # op == 1 deletes the character
        else:
            out.append(ch)
    name = "".join(out).strip() or base
    return f"{name} {suffix}".strip()


# -- ground truth ----------------------------------------------------------------------

@dataclass
class GroundTruth:
    seed: int
    snapshot_date: str
    window_start: str
    deal_links: list            # per deal row: true company id or None
    labels: dict                # company id -> planted label (0/1)
    probabilities: dict         # company id -> planted probability
    holding_duplicates: dict    # duplicate company id -> surviving company id
    agency_officers: list
    agency_appointments: int
    ftse_companies: list
    calibration: dict
    config: dict

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def load(cls, path) -> "GroundTruth":
        with open(path, encoding="utf-8") as fh:
            return cls(**json.load(fh))

    @property
    def positives(self) -> set[str]:
        return {cid for cid, y in self.labels.items() if y}

    def name_links(self, deal_names: list[str]) -> dict[str, set[str]]:
        """Deal name -> the set of companies it truly refers to (empty for unmatchable deals)."""
        links: dict[str, set[str]] = {}
        for name, cid in zip(deal_names, self.deal_links):
            target = links.setdefault(name, set())
            if cid is not None:
                target.add(self.holding_duplicates.get(cid, cid))
        return links


# -- generation ------------------------------------------------------------------------

@dataclass
class _Company:
    cid: str
    name: str
    base: str
    suffix: str
    city: str
    region: str
    industry: str
    sector: str
    incorporated: date
    is_ftse: bool = False
    parent_id: str = ""


def _logit_intercept(score: np.ndarray, rate: float) -> float:
    """Intercept making the mean planted probability equal ``rate``."""
    def gap(a):
        return float(np.mean(1.0 / (1.0 + np.exp(-(a + score))))) - rate
    return brentq(gap, -60.0, 60.0, xtol=1e-12)


def _zscore(v: np.ndarray) -> np.ndarray:
    """Standardise over observed entries; missing entries become 0 (no effect)."""
    out = np.zeros_like(v)
    ok = ~np.isnan(v)
    if ok.sum() > 1:
        sd = v[ok].std()
        out[ok] = (v[ok] - v[ok].mean()) / (sd if sd > 0 else 1.0)
    return out


def _exact_missing(rng, n: int, rate: float, bias: np.ndarray | None = None) -> np.ndarray:
    """Boolean mask with exactly ``round(rate * n)`` entries set, favouring high ``bias``."""
    k = int(round(rate * n))
    key = rng.random(n) if bias is None else bias + rng.gumbel(size=n)
    mask = np.zeros(n, dtype=bool)
    mask[np.argsort(-key, kind="stable")[:k]] = True
    return mask


def generate(config: GeneratorConfig | None = None, out_dir=None):
    """Generate the four source files; returns ``(paths, truth)``.

    When ``out_dir`` is None nothing is written and ``paths`` is empty; the
    tables are then available through ``truth`` only.
    """
    config = config or GeneratorConfig()
    config.validate()
    cal = config.calibration
    n = config.n_companies
    seed = config.seed
    rng = np.random.default_rng(derive_seed(seed, "synth"))
    snapshot = date(config.snapshot_year, 12, 31)
    window_start = snapshot + timedelta(days=1)

    # companies --------------------------------------------------------------
    city_names = [c[0] for c in CITIES]
    city_w = np.array([c[2] for c in CITIES], dtype=float)
    city_w /= city_w.sum()
    region_of = {c[0]: c[1] for c in CITIES}
    name_rng = np.random.default_rng(derive_seed(seed, "names"))
    seen: set[str] = set()
    from dealscope.linkage import normalize_name

    def fresh_name(industry):
        while True:
            base = _base_name(name_rng, industry)
            key = normalize_name(base).normalized
            if key and key not in seen:
                seen.add(key)
                return base

    age = np.exp(np.log(9.0) + 0.85 * rng.standard_normal(n)).clip(0.3, 80.0)
    companies: list[_Company] = []
    for i in range(n):
        ind, sector = INDUSTRIES[rng.integers(len(INDUSTRIES))]
        base = fresh_name(ind)
        suffix = ("Limited", "Ltd", "PLC", "Limited", "LLP", "Group Limited")[rng.integers(6)]
        city = city_names[rng.choice(len(city_names), p=city_w)]
        inc = snapshot - timedelta(days=int(age[i] * 365.25))
        companies.append(_Company(f"C{i + 1:06d}", f"{base} {suffix}", base, suffix, city,
                                  region_of[city], ind, sector, inc))
    age = np.array([year_fraction(c.incorporated, snapshot) for c in companies])

    size = rng.standard_normal(n) + 0.25 * _zscore(np.log(age))
    prof = rng.standard_normal(n)
    growth_rate = 0.05 + 0.12 * rng.standard_normal(n) - 0.04 * _zscore(np.log(age))
    quality = rng.standard_normal(n)

    ftse = np.zeros(n, dtype=bool)
    n_ftse = int(round(config.ftse_rate * n))
    ftse[np.argsort(-(size + 0.5 * rng.standard_normal(n)), kind="stable")[:n_ftse]] = True
    for i in np.flatnonzero(ftse):
        companies[i].is_ftse = True

    # latest accounts, calibrated --------------------------------------------
    small = -size
    miss = {
        "turnover": _exact_missing(rng, n, cal.turnover_missing, 1.2 * small),
        "ebitda": _exact_missing(rng, n, cal.ebitda_missing, 1.0 * small),
        "profit_margin": _exact_missing(rng, n, cal.profit_margin_missing, 0.8 * small),
        "shareholder_funds": _exact_missing(rng, n, cal.shareholder_funds_missing),
        "employees": _exact_missing(rng, n, 0.35, 0.8 * small),
        "liquidity": _exact_missing(rng, n, 0.2),
        "rose": _exact_missing(rng, n, 0.3),
        "asset_turnover": _exact_missing(rng, n, 0.55, 0.6 * small),
        "long_term_liabilities": _exact_missing(rng, n, 0.3),
    }
    u = stratified_uniform(rng, n)
    from scipy.stats import norm

    z_turn = norm.ppf(u)
    order = np.argsort(np.argsort(size + 0.35 * rng.standard_normal(n)))
    z_turn = np.sort(z_turn)[order]  # stratified marginal, ranked by latent size
    turnover = affine_calibrate(np.exp(1.55 * z_turn), cal.turnover_median, cal.turnover_mean,
                               ~miss["turnover"])
    margin = 0.07 + 0.07 * prof - rng.exponential(0.03, n)
    ebitda_raw = np.sort(np.exp(1.35 * norm.ppf(stratified_uniform(rng, n))))
    ebitda_raw = ebitda_raw[np.argsort(np.argsort(size + 0.6 * prof + 0.3 * rng.standard_normal(n)))]
    loss = rng.random(n) < 0.12 + 0.08 * (prof < -1)
    ebitda_raw = np.where(loss, -0.6 * ebitda_raw, ebitda_raw)
    ebitda = affine_calibrate(ebitda_raw, cal.ebitda_median, cal.ebitda_mean, ~miss["ebitda"])
    pm_raw = 100 * (margin - 0.03 + 0.02 * rng.standard_normal(n)) - rng.exponential(5.0, n)
    profit_margin = affine_calibrate(pm_raw, cal.profit_margin_median, cal.profit_margin_mean,
                                     ~miss["profit_margin"])
    sf_raw = np.exp(1.4 * norm.ppf(stratified_uniform(rng, n)))
    sf_raw = np.sort(sf_raw)[np.argsort(np.argsort(size + 0.3 * np.log(age) + 0.5 * rng.standard_normal(n)))]
    sf_raw = np.where(rng.random(n) < 0.08, -0.5 * sf_raw, sf_raw)
    shareholder_funds = affine_calibrate(sf_raw, cal.shareholder_funds_median,
                                         cal.shareholder_funds_mean, ~miss["shareholder_funds"])
    employees = np.round(np.exp(3.0 + 1.1 * size + 0.4 * rng.standard_normal(n))).clip(1, None)
    liquidity = np.exp(0.25 + 0.5 * rng.standard_normal(n) + 0.1 * prof)
    rose = 100 * margin * np.exp(0.3 * rng.standard_normal(n)) * 1.8
    asset_turnover = np.exp(0.3 + 0.5 * rng.standard_normal(n))
    ltl = np.where(rng.random(n) < 0.3, 0.0, np.exp(5.5 + 1.2 * size + 0.8 * rng.standard_normal(n)))

    latest = {
        "turnover": turnover, "ebitda": ebitda, "profit_margin": profit_margin,
        "shareholder_funds": shareholder_funds, "employees": employees, "liquidity": liquidity,
        "rose": rose, "asset_turnover": asset_turnover, "long_term_liabilities": ltl,
    }
    observed = {k: np.where(miss[k], np.nan, v) for k, v in latest.items()}
    margin_pct = np.where(miss["turnover"] | miss["ebitda"] | (turnover <= 0), np.nan,
                          100 * ebitda / np.where(turnover > 0, turnover, 1.0))

    # yearly history backwards from the latest year
    years_back = np.minimum(config.financial_years - 1,
                            np.array([snapshot.year - c.incorporated.year for c in companies]))
    yearly_growth = growth_rate[:, None] + 0.06 * rng.standard_normal((n, config.financial_years))
    ebitda_shift = 0.25 * np.abs(ebitda)[:, None] * rng.standard_normal((n, config.financial_years))

    # boards -------------------------------------------------------------------
    pmf = director_pmf(cal.directors_median, cal.directors_mean)
    n_dirs = sample_discrete(pmf, stratified_uniform(rng, n))
    officer_rows = []
    inc_sorted = sorted((c.incorporated, i) for i, c in enumerate(companies))
    inc_dates = [d for d, _ in inc_sorted]
    ftse_idx = np.flatnonzero(ftse)
    title_names = [t for t, _ in TITLES]
    title_w = np.array([w for _, w in TITLES], dtype=float)
    title_w /= title_w.sum()
    person = 0
    agg_exp = np.full(n, np.nan)
    agg_prev = np.full(n, np.nan)
    agg_titles = np.zeros(n)
    agg_ftse = np.zeros(n, dtype=int)
    agg_active = np.zeros(n)

    def random_company_before(day: date, exclude: int) -> int:
        k = bisect_right(inc_dates, day)
        if k == 0:
            return -1
        for _ in range(4):
            if len(ftse_idx) and rng.random() < config.ftse_prior_preference:
                j = int(ftse_idx[rng.integers(len(ftse_idx))])
                if companies[j].incorporated <= day and j != exclude:
                    return j
            j = inc_sorted[int(rng.integers(k))][1]
            if j != exclude:
                return j
        return -1

    for i, comp in enumerate(companies):
        exps, prevs, titles = [], [], set()
        ftse_count = 0
        span = max((snapshot - comp.incorporated).days, 1)
        for seat in range(int(n_dirs[i])):
            person += 1
            oid = f"P{person:07d}"
            # boards turn over: seats were filled a few years back, never before incorporation
            appointed = max(comp.incorporated,
                            snapshot - timedelta(days=int(rng.exponential(4.0) * 365.25)))
            experienced = rng.random() < 1 / (1 + math.exp(-(-0.2 + 0.9 * quality[i])))
            n_prior = 1 + rng.poisson(math.exp(0.1 + 0.35 * quality[i])) if experienced else 0
            career_years = rng.gamma(2.0, 3.0 + 2.0 * max(quality[i], -1.0)) if experienced else 0.0
            start = appointed - timedelta(days=int(career_years * 365.25))
            prior_companies = set()
            first = appointed
            has_ftse = False
            for p in range(n_prior):
                frac = p / max(n_prior, 1)
                when = start + timedelta(days=int(frac * (appointed - start).days))
                j = random_company_before(when, i)
                if j < 0:
                    continue
                left = when + timedelta(days=int(rng.random() * max((appointed - when).days, 1)))
                left = min(left, appointed - timedelta(days=1))
                if left < when:
                    continue
                prior_companies.add(j)
                first = min(first, when)
                has_ftse |= companies[j].is_ftse
                officer_rows.append((oid, companies[j].cid, "director", "director", when, left,
                                     None, False))
            birth = appointed.year - int(np.clip(rng.normal(46, 9), 21, 80))
            title = title_names[rng.choice(len(title_names), p=title_w)] if seat else "director"
            officer_rows.append((oid, comp.cid, "director", title, appointed, None, birth, False))
            titles.add(title)
            exps.append(year_fraction(first, appointed))
            prevs.append(len(prior_companies))
            ftse_count += int(has_ftse)
        if rng.random() < 0.35:
            person += 1
            officer_rows.append((f"P{person:07d}", comp.cid, "secretary", "secretary",
                                 comp.incorporated + timedelta(days=int(rng.random() * span)), None,
                                 None, False))
            titles.add("secretary")
        agg_exp[i] = np.mean(exps)
        agg_prev[i] = np.mean(prevs)
        agg_titles[i] = len(titles)
        agg_ftse[i] = ftse_count
        agg_active[i] = n_dirs[i] + (1 if "secretary" in titles else 0)

    agency = [f"A{k:03d}" for k in range(1, 2)] if config.agency_appointments else []
    agency_targets = rng.choice(n, size=min(config.agency_appointments, n), replace=False)
    for j in np.sort(agency_targets):
        officer_rows.append((agency[0], companies[j].cid, "secretary", "secretary",
                             companies[j].incorporated, None, None, True))

    # planted label ------------------------------------------------------------
    sig = config.signal
    log_age = np.log1p(age)
    obs_ebitda = observed["ebitda"]
    band_lo, band_hi = (np.nanquantile(obs_ebitda, [0.45, 0.97]) if np.isfinite(obs_ebitda).any()
                        else (0.0, 0.0))
    in_band = np.where(np.isnan(obs_ebitda), 0.0,
                       ((obs_ebitda > band_lo) & (obs_ebitda < band_hi)).astype(float) - 0.5)
    growth_obs = np.where(miss["turnover"], np.nan, np.tanh(growth_rate / 0.25))
    turnover_log = np.where(np.isnan(observed["turnover"]), np.nan,
                            np.sign(observed["turnover"]) * np.log1p(np.abs(observed["turnover"])))
    exp_log = np.log1p(agg_exp)
    young = age < np.median(age)
    experienced_board = exp_log >= np.quantile(exp_log, 0.7)
    score = (
        sig.age * _zscore(log_age)
        + sig.size * _zscore(turnover_log)
        + sig.ebitda_band * in_band
        + sig.growth * _zscore(growth_obs)
        + sig.loss_history * np.where(np.isnan(obs_ebitda), 0.0, (obs_ebitda < 0).astype(float))
        + sig.roles * _zscore(np.log1p(agg_titles))
        + sig.experience * _zscore(exp_log)
        + sig.previous_companies * _zscore(np.log1p(agg_prev))
        + sig.active_directors * _zscore(agg_active)
        + sig.ftse_one * (agg_ftse == 1)
        + sig.young_experienced * (young & experienced_board)
        + sig.experienced_profitable * (experienced_board & (in_band > 0))
        + sig.employees * _zscore(np.log1p(observed["employees"]))
        + sig.liquidity * _zscore(np.log(observed["liquidity"]))
        + sig.rose * _zscore(np.tanh(observed["rose"] / 20.0))
        + sig.profit_margin * _zscore(observed["profit_margin"])
        + sig.shareholder_funds * _zscore(np.sign(observed["shareholder_funds"])
                                          * np.log1p(np.abs(observed["shareholder_funds"])))
        + sig.asset_turnover * _zscore(np.log(observed["asset_turnover"]))
    )
    score = sig.scale * score
    alpha = _logit_intercept(score, config.positive_rate)
    prob = 1.0 / (1.0 + np.exp(-(alpha + score)))
    label = (rng.random(n) < prob).astype(int)

    # holding-company twins -----------------------------------------------------
    n_twins = int(round(config.holding_duplicate_rate * n))
    twin_of = np.sort(rng.choice(n, size=n_twins, replace=False)) if n_twins else np.array([], int)
    twins: list[tuple[int, _Company]] = []
    for k, i in enumerate(twin_of):
        comp = companies[i]
        parent = f"G{k + 1:05d}"
        comp.parent_id = parent
        stem = comp.base.split(" ")[0]
        twin = _Company(f"C{n + k + 1:06d}", f"{stem} Holdings Limited", stem, "Holdings Limited",
                        comp.city, comp.region, comp.industry, comp.sector, comp.incorporated,
                        False, parent)
        twins.append((int(i), twin))

    # deals --------------------------------------------------------------------
    deal_rng = np.random.default_rng(derive_seed(seed, "deals"))
    deals = []  # (name, date, city, region, industry, company index or -1)
    for i in np.flatnonzero(label):
        when = window_start + timedelta(days=int(deal_rng.integers(0, 31)))
        deals.append((i, when))
        if deal_rng.random() < config.duplicate_deal_rate:
            deals.append((i, when + timedelta(days=int(deal_rng.integers(1, 60)))))
    n_prior_deals = int(round(config.prior_deal_rate * n))
    for i in deal_rng.choice(n, size=n_prior_deals, replace=False):
        c = companies[i]
        lo = max(c.incorporated, date(config.snapshot_year - 9, 1, 1))
        days = (snapshot - timedelta(days=30) - lo).days
        if days <= 0:
            continue
        deals.append((int(i), lo + timedelta(days=int(deal_rng.integers(0, days)))))
    n_unmatched = int(round(len(deals) * config.unmatched_deal_fraction
                            / max(1e-9, 1 - config.unmatched_deal_fraction)))
    for _ in range(n_unmatched):
        start = date(config.snapshot_year - 9, 1, 1)
        deals.append((-1, start + timedelta(days=int(deal_rng.integers(0, (window_start - start).days + 31)))))

    knots_q, knots_v = _deal_value_knots(cal)
    n_deals = len(deals)
    undisclosed = _exact_missing(deal_rng, n_deals, cal.deal_value_undisclosed)
    disclosed_u = stratified_uniform(deal_rng, int((~undisclosed).sum()))
    disclosed_v = np.round(np.interp(disclosed_u, knots_q, knots_v), 3)
    band_u = stratified_uniform(deal_rng, int(undisclosed.sum()))
    band_idx = np.searchsorted(np.cumsum(cal.deal_band_shares), band_u, side="right").clip(0, 2)
    band_text = ("n/d (<25£m)", "n/d (25 - 50£m)", "n/d (50 - 100£m)")
    deal_rows = []
    links = []
    di = bi = 0
    for k, (i, when) in enumerate(deals):
        if undisclosed[k]:
            value = band_text[band_idx[bi]]
            bi += 1
        else:
            value = repr(float(disclosed_v[di]))
            di += 1
        if i >= 0:
            c = companies[i]
            name = corrupt_name(c.base, c.suffix, deal_rng, config.name_corruption)
            city = c.city
            if deal_rng.random() < config.city_mismatch_rate:
                city = city_names[deal_rng.choice(len(city_names), p=city_w)]
            industry = c.sector
            links.append(c.cid)
        else:
            ind, sector = INDUSTRIES[deal_rng.integers(len(INDUSTRIES))]
            name = f"{fresh_name(ind)} {LEGAL_SUFFIXES[deal_rng.integers(len(LEGAL_SUFFIXES))]}"
            city = city_names[deal_rng.choice(len(city_names), p=city_w)]
            industry = sector
            links.append(None)
        display_city = city.title() if deal_rng.random() < 0.7 else city.upper()
        deal_rows.append((name, when.isoformat(), "UK", region_of[city], display_city, value,
                          industry, EQUITY_LEADS[deal_rng.integers(len(EQUITY_LEADS))]))

    # financial rows ------------------------------------------------------------
    fin_fields = ("turnover", "ebitda", "ebitda_margin", "shareholder_funds", "employees",
                  "liquidity", "rose", "profit_margin", "asset_turnover", "long_term_liabilities")
    fin_rows = []
    for i, comp in enumerate(companies):
        rows = []
        t, e = turnover[i], ebitda[i]
        for back in range(int(years_back[i]) + 1):
            year = snapshot.year - back
            period = date(year, 12, 31)
            if period < comp.incorporated:
                break
            shrink = 1.0 + 0.2 * (back > 0) * rng.standard_normal()
            vals = {
                "turnover": t,
                "ebitda": e,
                "shareholder_funds": shareholder_funds[i] * (1 - 0.05 * back),
                "employees": max(1.0, round(employees[i] * (1 - 0.03 * back))),
                "liquidity": liquidity[i] * abs(shrink),
                "rose": rose[i] * abs(shrink),
                "profit_margin": float(profit_margin[i] + 1.5 * back * rng.standard_normal()),
                "asset_turnover": asset_turnover[i] * abs(shrink),
                "long_term_liabilities": ltl[i] * (1 - 0.04 * back),
            }
            for key in vals:
                if miss[key][i]:
                    vals[key] = None
            if vals["turnover"] is not None and vals["ebitda"] is not None and t > 0:
                vals["ebitda_margin"] = 100 * e / t
            else:
                vals["ebitda_margin"] = None
            rows.append((comp.cid, period, vals))
            t = t / (1.0 + float(yearly_growth[i, back]))
            e = e - float(ebitda_shift[i, back]) if back < config.financial_years else e
        fin_rows.extend(reversed(rows))
    twin_fin = []
    for i, twin in twins:
        for cid, period, vals in fin_rows:
            if cid == companies[i].cid:
                twin_fin.append((twin.cid, period, vals))
    fin_rows.extend(twin_fin)

    # ground truth ----------------------------------------------------------------
    achieved = {
        "turnover_median": float(np.nanmedian(observed["turnover"])),
        "turnover_mean": float(np.nanmean(observed["turnover"])),
        "ebitda_median": float(np.nanmedian(obs_ebitda)),
        "ebitda_mean": float(np.nanmean(obs_ebitda)),
        "profit_margin_median": float(np.nanmedian(observed["profit_margin"])),
        "profit_margin_mean": float(np.nanmean(observed["profit_margin"])),
        "shareholder_funds_median": float(np.nanmedian(observed["shareholder_funds"])),
        "shareholder_funds_mean": float(np.nanmean(observed["shareholder_funds"])),
        "directors_median": float(np.median(n_dirs)),
        "directors_mean": float(np.mean(n_dirs)),
        "deal_value_median": float(np.median(disclosed_v)) if len(disclosed_v) else float("nan"),
        "deal_value_mean": float(np.mean(disclosed_v)) if len(disclosed_v) else float("nan"),
        "positive_rate": float(label.mean()),
        "intercept": float(alpha),
    }
    truth = GroundTruth(
        seed=seed,
        snapshot_date=snapshot.isoformat(),
        window_start=window_start.isoformat(),
        deal_links=links,
        labels={c.cid: int(label[i]) for i, c in enumerate(companies)},
        probabilities={c.cid: float(prob[i]) for i, c in enumerate(companies)},
        holding_duplicates={twin.cid: companies[i].cid for i, twin in twins},
        agency_officers=agency,
        agency_appointments=int(len(agency_targets)) if agency else 0,
        ftse_companies=[c.cid for c in companies if c.is_ftse],
        calibration=achieved,
        config=config.to_dict(),
    )

    paths = {}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = _write_tables(out, companies, twins, fin_rows, officer_rows, deal_rows, fin_fields)
        paths["ground_truth"] = out / "ground_truth.json"
        paths["ground_truth"].write_text(truth.to_json(), encoding="utf-8")
    log.info("generated %d companies, %d deals, %d positives", n, len(deal_rows), int(label.sum()))
    return paths, truth


def _num(v, digits=2):
    if v is None:
        return ""
    return f"{float(v):.{digits}f}"


def _write_tables(out: Path, companies, twins, fin_rows, officer_rows, deal_rows, fin_fields):
    paths = {name: out / f"{name}.csv" for name in ("companies", "financials", "officers", "deals")}
    with paths["companies"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["company_id", "name", "city", "incorporation_date", "is_ftse", "parent_id"])
        for c in list(companies) + [t for _, t in twins]:
            w.writerow([c.cid, c.name, c.city.title(), c.incorporated.isoformat(), int(c.is_ftse),
                        c.parent_id])
    with paths["financials"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["company_id", "period_end", *fin_fields])
        for cid, period, vals in fin_rows:
            row = [cid, period.isoformat()]
            for f in fin_fields:
                v = vals.get(f)
                row.append("" if v is None else (str(int(v)) if f == "employees" else _num(v)))
            w.writerow(row)
    with paths["officers"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["officer_id", "company_id", "role", "title", "appointed_on", "resigned_on",
                    "birth_year", "is_institutional"])
        for oid, cid, role, title, appointed, resigned, birth, inst in officer_rows:
            w.writerow([oid, cid, role, title, appointed.isoformat(),
                        "" if resigned is None else resigned.isoformat(),
                        "" if birth is None else birth, int(inst)])
    with paths["deals"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["deal_name", "deal_date", "country", "region", "city", "deal_value", "industry",
                    "equity_lead"])
        w.writerows(deal_rows)
    return paths


# -- verification ------------------------------------------------------------------------

@dataclass
class TruthReport:
    linkage_precision: float
    linkage_recall: float
    accepted: int
    correct: int
    linkable_names: int
    unmatchable_accepted: int
    label_agreement: float | None = None
    planted_positives: int | None = None
    recovered_positives: int | None = None
    false_positive_labels: int | None = None
    agency_removed: bool | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def verify_against_truth(matches, deal_names: list[str], truth: GroundTruth, dataset=None,
                         store=None) -> TruthReport:
    """Linkage precision/recall per unique deal name, plus label recovery when a dataset is given.

    ``deal_names`` are the deal-table names in file order (the order
    ``truth.deal_links`` refers to).
    """
    links = truth.name_links(deal_names)
    accepted = [m for m in matches if m.accepted]
    correct = sum(1 for m in accepted if m.company_id in links.get(m.deal_name, set()))
    unmatchable = sum(1 for m in accepted if not links.get(m.deal_name))
    linkable = sum(1 for targets in links.values() if targets)
    report = TruthReport(
        linkage_precision=correct / len(accepted) if accepted else 1.0,
        linkage_recall=correct / linkable if linkable else 1.0,
        accepted=len(accepted),
        correct=correct,
        linkable_names=linkable,
        unmatchable_accepted=unmatchable,
    )
    if dataset is not None:
        planted = np.array([truth.labels.get(str(cid), 0) for cid in dataset.ids])
        report.label_agreement = float(np.mean(planted == dataset.y))
        report.planted_positives = len(truth.positives)
        report.recovered_positives = int(np.sum((planted == 1) & (dataset.y == 1)))
        report.false_positive_labels = int(np.sum((planted == 0) & (dataset.y == 1)))
    if store is not None:
        report.agency_removed = not any(a.officer_id in set(truth.agency_officers) for a in store.officers)
    return report
