"""Fuzzy linkage of deal names to registry companies.

Names are normalised (lower case, legal-status tokens and punctuation
removed) and compared with a length-normalised Levenshtein ratio.  A deal
name is accepted when its best registry candidate scores at least ``hi``,
or at least ``lo`` with the same city on both sides.

Candidate generation uses a bigram count filter.  If ``lev(a, b) <= k``
then at most ``2k`` bigram positions of ``a`` are touched by the edits, so
the two names share at least ``|B(a)| - 2k`` distinct bigrams (and likewise
for ``b``), and their lengths differ by at most ``k``.  Pairs failing
either bound cannot reach ratio ``lo`` and are skipped; everything else is
scored exactly.  The filter never drops a qualifying pair, so the result
equals a full scan.
"""

from __future__ import annotations

import enum
import math
import re
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import sparse

LEGAL_TOKENS = frozenset(
    {"limited", "ltd", "ltd.", "plc", "llp", "group", "holdings", "holding",
     "company", "co", "co.", "uk", "(uk)"}
)

_APOSTROPHES = re.compile(r"['’`]")
_NON_ALNUM = re.compile(r"[^0-9a-z\s]+")
_EPS = 1e-9


@dataclass(frozen=True)
class NormalizedName:
    original: str
    normalized: str
    only_legal_tokens: bool = False

    @property
    def match_key(self) -> str:
        """String used for scoring.

        A name made only of legal tokens ("Holdings Limited") would
        normalise to the empty string and tie with every other such name,
        so it is scored on its cleaned form with the tokens kept.
        """
        if self.only_legal_tokens:
            return " ".join(_clean_tokens(self.original))
        return self.normalized


def _clean_tokens(raw: str) -> list[str]:
    text = _APOSTROPHES.sub("", raw.lower())
    return _NON_ALNUM.sub(" ", text).split()


def normalize_name(raw: str) -> NormalizedName:
    lowered = raw.lower().split()
    # whole-token removal happens before punctuation is stripped ("ltd.",
    # "(uk)") and again after it ("cera - limited" -> "cera")
    kept = [tok for tok in lowered if tok not in LEGAL_TOKENS]
    tokens = [tok for tok in _clean_tokens(" ".join(kept)) if tok not in LEGAL_TOKENS]
    normalized = " ".join(tokens)
    only_legal = not normalized and bool(_clean_tokens(raw))
    return NormalizedName(raw, normalized, only_legal)


def levenshtein(a: str, b: str, max_distance: int | None = None) -> int:
    """Unit-cost edit distance between ``a`` and ``b``.

    With ``max_distance`` set, the computation stops as soon as the answer
    is known to exceed it and returns ``max_distance + 1``.
    """
    if a == b:
        return 0
    # common prefix and suffix never change the distance
    start = 0
    stop = min(len(a), len(b))
    while start < stop and a[start] == b[start]:
        start += 1
    a = a[start:]
    b = b[start:]
    while a and b and a[-1] == b[-1]:
        a = a[:-1]
        b = b[:-1]
    if len(a) < len(b):
        a, b = b, a
    if not b:
        dist = len(a)
        if max_distance is not None and dist > max_distance:
            return max_distance + 1
        return dist
    if max_distance is not None and len(a) - len(b) > max_distance:
        return max_distance + 1

    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        left = i
        for j, cb in enumerate(b):
            best = prev[j] + (ca != cb)
            up = prev[j + 1] + 1
            if up < best:
                best = up
            if left + 1 < best:
                best = left + 1
            cur.append(best)
            left = best
        if max_distance is not None and min(cur) > max_distance:
            return max_distance + 1
        prev = cur
    dist = prev[-1]
    if max_distance is not None and dist > max_distance:
        return max_distance + 1
    return dist


def levenshtein_ratio(a: str, b: str) -> float:
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / longest


class MatchTier(str, enum.Enum):
    HIGH = "HIGH"
    MID_CITY = "MID_CITY"
    REJECTED = "REJECTED"


@dataclass(frozen=True)
class MatchResult:
    deal_name: str
    company_id: str | None
    ratio: float
    tier: MatchTier
    city_agreed: bool
    reason: str = ""

    @property
    def accepted(self) -> bool:
        return self.tier is not MatchTier.REJECTED


@dataclass
class FunnelReport:
    """Staged match counts in the layout of a fuzzy-matching funnel table."""

    deal_rows: int
    unique_names: int
    high: int
    mid_band: int
    mid_matched: int
    hi: float
    lo: float
    notes: list[str] = field(default_factory=list)

    @property
    def matched(self) -> int:
        return self.high + self.mid_matched

    def rows(self) -> list[dict]:
        hi_pct = f"{self.hi * 100:g}%"
        lo_pct = f"{self.lo * 100:g}%"
        total = self.unique_names

        def pct(count):
            return round(100.0 * count / total) if total else 0

        return [
            {"filtering": "Deal dataset", "observations": self.deal_rows, "percentage": None},
            {"filtering": "Unique companies in the deal dataset",
             "observations": total, "percentage": 100 if total else 0},
            {"filtering": f">={hi_pct} match confidence",
             "observations": self.high, "percentage": pct(self.high)},
            {"filtering": f">={lo_pct} and <{hi_pct} match confidence",
             "observations": self.mid_band, "percentage": pct(self.mid_band)},
            {"filtering": f">={lo_pct} and <{hi_pct} match confidence, matched",
             "observations": self.mid_matched, "percentage": pct(self.mid_matched)},
            {"filtering": "Companies matched",
             "observations": self.matched, "percentage": pct(self.matched)},
        ]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["matched"] = self.matched
        out["rows"] = self.rows()
        return out


def _bigrams(text: str) -> set[str]:
    return {text[i:i + 2] for i in range(len(text) - 1)}


class CandidateIndex:
    """Bigram index over registry names for recall-safe candidate filtering."""

    def __init__(self, keys: Sequence[str]):
        self.keys = list(keys)
        self.lengths = np.array([len(k) for k in self.keys], dtype=np.int64)
        vocab: dict[str, int] = {}
        rows, cols = [], []
        n_grams = np.zeros(len(self.keys), dtype=np.int64)
        for row, key in enumerate(self.keys):
            grams = _bigrams(key)
            n_grams[row] = len(grams)
            for gram in grams:
                rows.append(row)
                cols.append(vocab.setdefault(gram, len(vocab)))
        self.vocab = vocab
        self.n_grams = n_grams
        data = np.ones(len(rows), dtype=np.int32)
        self.matrix = sparse.csr_matrix(
            (data, (rows, cols)), shape=(len(self.keys), max(len(vocab), 1))
        )

    def candidates(self, query: str, lo: float) -> np.ndarray:
        """Indices of keys that can possibly reach ratio >= ``lo`` with ``query``."""
        grams = [self.vocab[g] for g in _bigrams(query) if g in self.vocab]
        vec = np.zeros(self.matrix.shape[1], dtype=np.int32)
        vec[grams] = 1
        shared = self.matrix @ vec
        q_len = len(query)
        q_grams = len(_bigrams(query))
        longest = np.maximum(self.lengths, q_len)
        budget = np.floor((1.0 - lo) * longest + _EPS)
        ok = np.abs(self.lengths - q_len) <= budget
        ok &= shared >= q_grams - 2 * budget
        ok &= shared >= self.n_grams - 2 * budget
        return np.flatnonzero(ok)


def _best_candidate(query: str, index: CandidateIndex, ids: Sequence[str], lo: float):
    """Best (ratio, company_id) among registry keys; ties go to the smallest id."""
    best_ratio = -1.0
    best_id = None
    for row in index.candidates(query, lo):
        key = index.keys[row]
        longest = max(len(query), len(key))
        if longest == 0:
            ratio = 1.0
        else:
            cutoff = math.floor((1.0 - lo) * longest + _EPS)
            dist = levenshtein(query, key, max_distance=cutoff)
            if dist > cutoff:
                continue
            ratio = 1.0 - dist / longest
        cid = ids[row]
        if ratio > best_ratio or (ratio == best_ratio and cid < best_id):
            best_ratio = ratio
            best_id = cid
    return best_ratio, best_id


def _clean_city(city: str | None) -> str:
    return (city or "").strip().lower()


def match_deals(deals: Iterable, companies: Iterable, hi: float = 0.90, lo: float = 0.70):
    """Link each unique deal name to at most one registry company.

    ``deals`` need ``deal_name`` and ``city`` attributes; ``companies`` need
    ``company_id``, ``name`` and ``city``.  Returns ``(results, funnel)``
    with one :class:`MatchResult` per unique deal name in first-seen order.
    """
    if not 0.0 <= lo <= hi <= 1.0:
        raise ValueError(f"thresholds must satisfy 0 <= lo <= hi <= 1, got lo={lo}, hi={hi}")
    deals = list(deals)
    companies = sorted(companies, key=lambda c: c.company_id)

    cities_by_name: dict[str, set[str]] = {}
    for deal in deals:
        cities_by_name.setdefault(deal.deal_name, set()).add(_clean_city(deal.city))

    ids = [c.company_id for c in companies]
    company_city = {c.company_id: _clean_city(c.city) for c in companies}
    keys = [normalize_name(c.name).match_key for c in companies]
    index = CandidateIndex(keys) if companies else None

    results: list[MatchResult] = []
    high = mid_band = mid_matched = 0
    for name, cities in cities_by_name.items():
        if index is None:
            results.append(MatchResult(name, None, 0.0, MatchTier.REJECTED, False,
                                       "no registry companies"))
            continue
        query = normalize_name(name).match_key
        ratio, cid = _best_candidate(query, index, ids, lo)
        if cid is None:
            results.append(MatchResult(name, None, 0.0, MatchTier.REJECTED, False,
                                       f"no candidate with ratio >= {lo:g}"))
            continue
        city_agreed = company_city[cid] in cities and company_city[cid] != ""
        if ratio >= hi:
            high += 1
            results.append(MatchResult(name, cid, ratio, MatchTier.HIGH, city_agreed))
        else:
            mid_band += 1
            if city_agreed:
                mid_matched += 1
                results.append(MatchResult(name, cid, ratio, MatchTier.MID_CITY, True))
            else:
                results.append(MatchResult(name, cid, ratio, MatchTier.REJECTED, False,
                                           "mid-band ratio without city agreement"))

    funnel = FunnelReport(
        deal_rows=len(deals),
        unique_names=len(cities_by_name),
        high=high,
        mid_band=mid_band,
        mid_matched=mid_matched,
        hi=hi,
        lo=lo,
    )
    return results, funnel
