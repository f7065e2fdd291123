"""Metric suite over sanitized page loads joined with the tracker DB.

Reach counts page loads, site reach counts distinct first-party digests;
the two have different denominators and are deliberately never compared
directly. Counter aggregation reports, per tracker, the proportion of
its pages on which a method (cookies, identifiers, blocking, each
content type) appeared at least once. Company reach is the page-level
union over member trackers: their page sets intersect, so sums mislead.

Aggregation is merge-friendly: per-page extraction feeds pure counters
and sets, halves can be merged associatively, and every ratio is
computed in a final pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone

from .errors import (EmptyCorpus, EmptySlice, TrackerAbsent, UndefinedRatio)
from .probe import RESOURCE_TYPES, ThirdPartyStats, external_block_signal, merge_stats
from .sanitize import SanitizedPageLoad
from .trackerdb import TrackerDb

BYTES_PER_MB = 1_000_000.0

#: Content types reportable per tracker (requests, not navigations).
TRACKABLE_TYPES = tuple(t for t in RESOURCE_TYPES if t != "main_frame")


@dataclass(frozen=True, order=True)
class MonthKey:
    year: int
    month: int

    def __post_init__(self):
        if not 1 <= self.month <= 12:
            raise ValueError(f"invalid month {self.month}")

    def __str__(self) -> str:
        return f"{self.year:04d}-{self.month:02d}"

    @classmethod
    def from_ms(cls, ms: int) -> "MonthKey":
        dt = datetime.fromtimestamp(ms / 1000.0, tz=timezone.utc)
        return cls(year=dt.year, month=dt.month)

    @classmethod
    def parse(cls, text: str) -> "MonthKey":
        year, month = text.split("-")
        return cls(year=int(year), month=int(month))


@dataclass(frozen=True)
class TrackerInfo:
    tracker_id: str
    tracker_name: str
    company_id: str
    category: str
    curated: bool


def resolve_tracker(db: TrackerDb, hostname: str) -> TrackerInfo:
    """Tracker identity for a (TLD+2) hostname.

    Unmatched hostnames become auto-discovered trackers keyed by the
    hostname itself, categorized "unknown", with no company attribution.
    """
    entry = db.match(hostname)
    if entry is None:
        return TrackerInfo(tracker_id=hostname, tracker_name=hostname,
                           company_id="", category="unknown", curated=False)
    return TrackerInfo(tracker_id=entry.tracker_id,
                       tracker_name=entry.tracker_name,
                       company_id=entry.company_id,
                       category=entry.category, curated=True)


def page_trackers(page: SanitizedPageLoad, db: TrackerDb
                  ) -> dict[str, tuple[TrackerInfo, ThirdPartyStats]]:
    """Group a page's third parties by tracker, merging multi-domain stats."""
    out: dict[str, tuple[TrackerInfo, ThirdPartyStats]] = {}
    for tp in page.third_parties:
        info = resolve_tracker(db, tp.hostname)
        if info.tracker_id in out:
            _, merged = out[info.tracker_id]
            out[info.tracker_id] = (info, merge_stats(merged, tp,
                                                      hostname=info.tracker_id))
        else:
            out[info.tracker_id] = (info, tp)
    return out


def _is_cookie(stats: ThirdPartyStats) -> bool:
    return stats.cookies_sent + stats.set_cookie > 0


def _is_fingerprint(stats: ThirdPartyStats) -> bool:
    return stats.unsafe_identifier > 0


def _is_tracking(stats: ThirdPartyStats) -> bool:
    return _is_cookie(stats) or _is_fingerprint(stats)


def _is_secure(stats: ThirdPartyStats) -> bool:
    return stats.scheme_http == 0


def _is_blocked(stats: ThirdPartyStats) -> bool:
    return stats.count_blocked + external_block_signal(stats) > 0


def quantile(sorted_values, q: float) -> float:
    """Linear-interpolation quantile over an ascending list."""
    n = len(sorted_values)
    if n == 0:
        raise ValueError("quantile of empty list")
    pos = q * (n - 1)
    lo = int(pos)
    frac = pos - lo
    if frac == 0.0:
        return float(sorted_values[lo])
    return float(sorted_values[lo]
                 + (sorted_values[lo + 1] - sorted_values[lo]) * frac)


@dataclass(frozen=True)
class ContentLengthSummary:
    median_mb: float
    iqr_low_mb: float
    iqr_high_mb: float

    def to_dict(self) -> dict:
        return {"median_mb": self.median_mb, "iqr_low_mb": self.iqr_low_mb,
                "iqr_high_mb": self.iqr_high_mb}


def _summarize_lengths(byte_values) -> ContentLengthSummary:
    mbs = sorted(v / BYTES_PER_MB for v in byte_values)
    return ContentLengthSummary(median_mb=quantile(mbs, 0.5),
                                iqr_low_mb=quantile(mbs, 0.25),
                                iqr_high_mb=quantile(mbs, 0.75))


# ---------------------------------------------------------------------------
# Standalone metric operations


def tracker_reach(corpus, tracker_id: str, db: TrackerDb) -> float:
    """Fraction of all page loads on which the tracker appears.

    A page counts once per tracker no matter how many requests it made;
    pages with no third parties stay in the denominator.
    """
    if not corpus:
        raise EmptyCorpus("reach over empty corpus")
    pages = sum(1 for page in corpus if tracker_id in page_trackers(page, db))
    return pages / len(corpus)


def site_reach(corpus, tracker_id: str, db: TrackerDb) -> float:
    """Fraction of distinct sites on which the tracker was seen at all."""
    if not corpus:
        raise EmptyCorpus("site reach over empty corpus")
    all_sites = set()
    tracker_sites = set()
    for page in corpus:
        all_sites.add(page.hostname_digest)
        if tracker_id in page_trackers(page, db):
            tracker_sites.add(page.hostname_digest)
    return len(tracker_sites) / len(all_sites)


def reach_ratio(corpus, tracker_id: str, db: TrackerDb) -> float:
    """reach / site reach: high for trackers dense on few popular sites."""
    sr = site_reach(corpus, tracker_id, db)
    if sr == 0.0:
        raise UndefinedRatio(f"site reach of {tracker_id!r} is zero")
    return tracker_reach(corpus, tracker_id, db) / sr


@dataclass(frozen=True)
class ContextProportions:
    cookie: float
    fingerprint: float
    tracking: float
    secure: float

    def to_dict(self) -> dict:
        return {"cookie": self.cookie, "fingerprint": self.fingerprint,
                "tracking": self.tracking, "secure": self.secure}


def context_proportions(corpus, tracker_id: str, db: TrackerDb
                        ) -> ContextProportions:
    """Per-context page proportions over the pages where a tracker appears.

    Cookie context: cookies sent or a Set-Cookie received. Fingerprint
    context: an unsafe identifier detected in a request URL. Tracking is
    the inclusive or of the two. Secure: none of the tracker's requests
    used plain HTTP.
    """
    pages = cookie = fingerprint = tracking = secure = 0
    for page in corpus:
        found = page_trackers(page, db).get(tracker_id)
        if found is None:
            continue
        _, stats = found
        pages += 1
        cookie += _is_cookie(stats)
        fingerprint += _is_fingerprint(stats)
        tracking += _is_tracking(stats)
        secure += _is_secure(stats)
    if pages == 0:
        raise TrackerAbsent(tracker_id)
    return ContextProportions(cookie=cookie / pages,
                              fingerprint=fingerprint / pages,
                              tracking=tracking / pages,
                              secure=secure / pages)


def content_type_usage(corpus, tracker_id: str, db: TrackerDb) -> dict:
    """Per content type, the fraction of the tracker's pages using it."""
    pages = 0
    per_type = {t: 0 for t in TRACKABLE_TYPES}
    for page in corpus:
        found = page_trackers(page, db).get(tracker_id)
        if found is None:
            continue
        pages += 1
        for ctype, count in found[1].content_types.items():
            if count > 0 and ctype in per_type:
                per_type[ctype] += 1
    if pages == 0:
        raise TrackerAbsent(tracker_id)
    return {t: per_type[t] / pages for t in TRACKABLE_TYPES}


def category_block_rates(corpus, db: TrackerDb) -> dict:
    """Per category: of pages carrying it, the fraction with blocking.

    Blocking counts both the hosting extension's own blocks and the
    silent request drop that signals an external blocker.
    """
    seen: dict[str, int] = {}
    blocked: dict[str, int] = {}
    for page in corpus:
        page_categories: set[str] = set()
        blocked_categories: set[str] = set()
        for info, stats in page_trackers(page, db).values():
            page_categories.add(info.category)
            if _is_blocked(stats):
                blocked_categories.add(info.category)
        for cat in page_categories:
            seen[cat] = seen.get(cat, 0) + 1
        for cat in blocked_categories:
            blocked[cat] = blocked.get(cat, 0) + 1
    return {cat: blocked.get(cat, 0) / seen[cat] for cat in sorted(seen)}


def https_adoption(corpus, db: TrackerDb | None = None,
                   tracker_id: str | None = None,
                   sites=None) -> float:
    """Proportion of fully-HTTPS page loads in a slice.

    Site slices (``sites`` digests, or the whole corpus) require every
    third-party request on the page to be HTTPS; a tracker slice only
    requires the tracker's own requests to be. Pages without third
    parties are vacuously secure.
    """
    pages = secure = 0
    for page in corpus:
        if tracker_id is not None:
            found = page_trackers(page, db).get(tracker_id)
            if found is None:
                continue
            pages += 1
            secure += _is_secure(found[1])
        else:
            if sites is not None and page.hostname_digest not in sites:
                continue
            pages += 1
            secure += all(tp.scheme_http == 0 for tp in page.third_parties)
    if pages == 0:
        raise EmptySlice("https adoption over empty slice")
    return secure / pages


def content_length_stats(corpus) -> ContentLengthSummary:
    """Median and IQR, in MB, of per-site mean third-party payload size.

    Each page contributes the sum of its third parties' content lengths;
    pages collapse to per-site means before the percentiles are taken.
    """
    if not corpus:
        raise EmptyCorpus("content length stats over empty corpus")
    site_totals: dict[str, list[int]] = {}
    for page in corpus:
        total = sum(tp.content_length_sum for tp in page.third_parties)
        site_totals.setdefault(page.hostname_digest, []).append(total)
    means = [sum(v) / len(v) for v in site_totals.values()]
    return _summarize_lengths(means)


def country_matrix(corpus, countries=None) -> dict:
    """Cross-border data-flow matrix.

    Cell (from, to) is the fraction of page loads from ``from``-country
    users with at least one third-party response served from ``to``.
    Rows do not sum to one: a page can contact many countries.
    """
    if countries is None:
        countries = [page.source_country for page in corpus]
    row_pages: dict[str, int] = {}
    cells: dict[str, dict[str, int]] = {}
    for page, source in zip(corpus, countries):
        row_pages[source] = row_pages.get(source, 0) + 1
        dests = set()
        for tp in page.third_parties:
            dests.update(c for c, n in tp.response_countries.items() if n > 0)
        row = cells.setdefault(source, {})
        for dest in dests:
            row[dest] = row.get(dest, 0) + 1
    return {src: {dest: count / row_pages[src]
                  for dest, count in sorted(cells.get(src, {}).items())}
            for src in sorted(row_pages)}


# ---------------------------------------------------------------------------
# Mergeable corpus accumulation


@dataclass
class _TrackerAccum:
    info: TrackerInfo
    pages: int = 0
    sites: set = field(default_factory=set)
    cookie_pages: int = 0
    fingerprint_pages: int = 0
    tracking_pages: int = 0
    secure_pages: int = 0
    blocked_pages: int = 0
    type_pages: dict = field(default_factory=dict)
    requests_total: int = 0
    tracking_requests_total: int = 0
    page_lengths: list = field(default_factory=list)
    site_pages: dict = field(default_factory=dict)

    def merge(self, other: "_TrackerAccum") -> None:
        self.pages += other.pages
        self.sites |= other.sites
        self.cookie_pages += other.cookie_pages
        self.fingerprint_pages += other.fingerprint_pages
        self.tracking_pages += other.tracking_pages
        self.secure_pages += other.secure_pages
        self.blocked_pages += other.blocked_pages
        for k, v in other.type_pages.items():
            self.type_pages[k] = self.type_pages.get(k, 0) + v
        self.requests_total += other.requests_total
        self.tracking_requests_total += other.tracking_requests_total
        self.page_lengths.extend(other.page_lengths)
        for k, v in other.site_pages.items():
            self.site_pages[k] = self.site_pages.get(k, 0) + v


@dataclass
class _SiteAccum:
    hostname_digest: str
    pages: int = 0
    tp_hostnames_total: int = 0
    trackers_total: int = 0
    tracking_pages: int = 0
    all_secure_pages: int = 0
    category_pages: dict = field(default_factory=dict)
    content_length_total: int = 0
    tracker_pages: dict = field(default_factory=dict)

    def merge(self, other: "_SiteAccum") -> None:
        self.pages += other.pages
        self.tp_hostnames_total += other.tp_hostnames_total
        self.trackers_total += other.trackers_total
        self.tracking_pages += other.tracking_pages
        self.all_secure_pages += other.all_secure_pages
        for k, v in other.category_pages.items():
            self.category_pages[k] = self.category_pages.get(k, 0) + v
        self.content_length_total += other.content_length_total
        for k, v in other.tracker_pages.items():
            self.tracker_pages[k] = self.tracker_pages.get(k, 0) + v


@dataclass
class _CompanyAccum:
    company_id: str
    tracker_ids: set = field(default_factory=set)
    pages: int = 0
    sites: set = field(default_factory=set)
    tracking_pages: int = 0

    def merge(self, other: "_CompanyAccum") -> None:
        self.tracker_ids |= other.tracker_ids
        self.pages += other.pages
        self.sites |= other.sites
        self.tracking_pages += other.tracking_pages


class CorpusStats:
    """Associative accumulator over sanitized page loads.

    ``add_page`` folds one page in; ``merge`` combines two accumulators
    built from disjoint corpus halves. All fields are sums, sets and
    lists, so merge order never changes the final report.
    """

    def __init__(self, db: TrackerDb):
        self.db = db
        self.pages = 0
        self.sites: set[str] = set()
        self.pages_with_tracking = 0
        self.all_secure_pages = 0
        self.tp_requests_total = 0
        self.tracking_requests_total = 0
        self.trackers: dict[str, _TrackerAccum] = {}
        self.site_accums: dict[str, _SiteAccum] = {}
        self.companies: dict[str, _CompanyAccum] = {}
        self.category_pages: dict[str, int] = {}
        self.category_blocked: dict[str, int] = {}
        self.matrix_rows: dict[str, int] = {}
        self.matrix_cells: dict[str, dict[str, int]] = {}

    def add_page(self, page: SanitizedPageLoad) -> None:
        self.pages += 1
        digest = page.hostname_digest
        self.sites.add(digest)

        site = self.site_accums.get(digest)
        if site is None:
            site = self.site_accums[digest] = _SiteAccum(hostname_digest=digest)
        site.pages += 1
        site.tp_hostnames_total += len(page.third_parties)
        page_length = sum(tp.content_length_sum for tp in page.third_parties)
        site.content_length_total += page_length
        if all(tp.scheme_http == 0 for tp in page.third_parties):
            site.all_secure_pages += 1
            self.all_secure_pages += 1

        by_tracker = page_trackers(page, self.db)
        site.trackers_total += len(by_tracker)

        page_tracking = False
        page_categories: set[str] = set()
        blocked_categories: set[str] = set()
        page_companies: dict[str, bool] = {}

        for tracker_id, (info, stats) in by_tracker.items():
            accum = self.trackers.get(tracker_id)
            if accum is None:
                accum = self.trackers[tracker_id] = _TrackerAccum(info=info)
            accum.pages += 1
            accum.sites.add(digest)
            accum.site_pages[digest] = accum.site_pages.get(digest, 0) + 1
            tracking = _is_tracking(stats)
            accum.cookie_pages += _is_cookie(stats)
            accum.fingerprint_pages += _is_fingerprint(stats)
            accum.tracking_pages += tracking
            accum.secure_pages += _is_secure(stats)
            accum.blocked_pages += _is_blocked(stats)
            for ctype, count in stats.content_types.items():
                if count > 0:
                    accum.type_pages[ctype] = accum.type_pages.get(ctype, 0) + 1
            accum.requests_total += stats.count_before_request
            if tracking:
                accum.tracking_requests_total += stats.count_before_request
                self.tracking_requests_total += stats.count_before_request
                page_tracking = True
            accum.page_lengths.append(stats.content_length_sum)
            self.tp_requests_total += stats.count_before_request

            site.tracker_pages[tracker_id] = \
                site.tracker_pages.get(tracker_id, 0) + 1
            page_categories.add(info.category)
            if _is_blocked(stats):
                blocked_categories.add(info.category)
            if info.company_id:
                page_companies[info.company_id] = \
                    page_companies.get(info.company_id, False) or tracking

        if page_tracking:
            self.pages_with_tracking += 1
            site.tracking_pages += 1
        for cat in page_categories:
            self.category_pages[cat] = self.category_pages.get(cat, 0) + 1
            site.category_pages[cat] = site.category_pages.get(cat, 0) + 1
        for cat in blocked_categories:
            self.category_blocked[cat] = self.category_blocked.get(cat, 0) + 1
        for company_id, tracking in page_companies.items():
            comp = self.companies.get(company_id)
            if comp is None:
                comp = self.companies[company_id] = \
                    _CompanyAccum(company_id=company_id)
            comp.tracker_ids |= {tid for tid, (info, _) in by_tracker.items()
                                 if info.company_id == company_id}
            comp.pages += 1
            comp.sites.add(digest)
            comp.tracking_pages += tracking

        source = page.source_country
        self.matrix_rows[source] = self.matrix_rows.get(source, 0) + 1
        dests = set()
        for tp in page.third_parties:
            dests.update(c for c, n in tp.response_countries.items() if n > 0)
        row = self.matrix_cells.setdefault(source, {})
        for dest in dests:
            row[dest] = row.get(dest, 0) + 1

    def merge(self, other: "CorpusStats") -> "CorpusStats":
        self.pages += other.pages
        self.sites |= other.sites
        self.pages_with_tracking += other.pages_with_tracking
        self.all_secure_pages += other.all_secure_pages
        self.tp_requests_total += other.tp_requests_total
        self.tracking_requests_total += other.tracking_requests_total
        # Merge into fresh accumulators rather than adopting the other
        # side's objects: both inputs stay usable afterwards.
        for key, accum in other.trackers.items():
            self.trackers.setdefault(
                key, _TrackerAccum(info=accum.info)).merge(accum)
        for key, site in other.site_accums.items():
            self.site_accums.setdefault(
                key, _SiteAccum(hostname_digest=key)).merge(site)
        for key, comp in other.companies.items():
            self.companies.setdefault(
                key, _CompanyAccum(company_id=key)).merge(comp)
        for d, src in ((self.category_pages, other.category_pages),
                       (self.category_blocked, other.category_blocked),
                       (self.matrix_rows, other.matrix_rows)):
            for k, v in src.items():
                d[k] = d.get(k, 0) + v
        for src, row in other.matrix_cells.items():
            mine = self.matrix_cells.setdefault(src, {})
            for dest, v in row.items():
                mine[dest] = mine.get(dest, 0) + v
        return self


# ---------------------------------------------------------------------------
# Report assembly


@dataclass
class TrackerAggregate:
    tracker_id: str
    tracker_name: str
    company_id: str
    category: str
    pages_seen: int
    sites_seen: int
    reach: float
    site_reach: float
    reach_ratio: float | None
    proportion_cookie_context: float
    proportion_fingerprint_context: float
    proportion_tracking_context: float
    proportion_secure_context: float
    proportion_blocked: float
    content_type_page_proportions: dict
    mean_requests_per_page: float
    mean_tracking_requests_per_page: float
    content_length_stats: ContentLengthSummary
    top_sites: list

    def to_dict(self) -> dict:
        data = self.__dict__.copy()
        data["content_length_stats"] = self.content_length_stats.to_dict()
        return data


@dataclass
class SiteAggregate:
    hostname_digest: str
    pages: int
    avg_third_parties_per_page: float
    avg_trackers_per_page: float
    proportion_pages_with_tracking: float
    proportion_all_secure: float
    category_mix: dict
    avg_third_party_content_length_mb: float
    top_trackers: list

    def to_dict(self) -> dict:
        return self.__dict__.copy()


@dataclass
class CompanyAggregate:
    company_id: str
    tracker_ids: list
    pages: int
    reach: float
    site_reach: float
    proportion_tracking_context: float

    def to_dict(self) -> dict:
        return self.__dict__.copy()


@dataclass
class CategoryAggregate:
    category: str
    trackers: int
    pages: int
    mean_reach: float
    block_rate: float

    def to_dict(self) -> dict:
        return self.__dict__.copy()


@dataclass
class AggregateReport:
    month: MonthKey
    corpus_size: int
    distinct_sites: int
    summary: dict
    trackers: list
    sites: list
    companies: list
    categories: list
    country_matrix: dict
    https: dict

    def to_dict(self) -> dict:
        return {
            "month": str(self.month),
            "corpus_size": self.corpus_size,
            "distinct_sites": self.distinct_sites,
            "summary": self.summary,
            "trackers": [t.to_dict() for t in self.trackers],
            "sites": [s.to_dict() for s in self.sites],
            "companies": [c.to_dict() for c in self.companies],
            "categories": [c.to_dict() for c in self.categories],
            "country_matrix": self.country_matrix,
            "https": self.https,
        }


def split_by_month(corpus) -> dict:
    """Partition records by calendar month of their start timestamp."""
    months: dict[MonthKey, list] = {}
    for page in corpus:
        months.setdefault(MonthKey.from_ms(page.started_at), []).append(page)
    return dict(sorted(months.items()))


def finalize(stats: CorpusStats, month: MonthKey) -> AggregateReport:
    """Compute every ratio from an accumulator and assemble the report."""
    if stats.pages == 0:
        raise EmptyCorpus("cannot report on an empty corpus")
    pages = stats.pages
    n_sites = len(stats.sites)

    trackers = []
    for tracker_id in sorted(stats.trackers):
        a = stats.trackers[tracker_id]
        sr = len(a.sites) / n_sites
        reach = a.pages / pages
        top_sites = sorted(a.site_pages.items(),
                           key=lambda kv: (-kv[1], kv[0]))[:10]
        trackers.append(TrackerAggregate(
            tracker_id=tracker_id,
            tracker_name=a.info.tracker_name,
            company_id=a.info.company_id,
            category=a.info.category,
            pages_seen=a.pages,
            sites_seen=len(a.sites),
            reach=reach,
            site_reach=sr,
            reach_ratio=(reach / sr) if sr > 0 else None,
            proportion_cookie_context=a.cookie_pages / a.pages,
            proportion_fingerprint_context=a.fingerprint_pages / a.pages,
            proportion_tracking_context=a.tracking_pages / a.pages,
            proportion_secure_context=a.secure_pages / a.pages,
            proportion_blocked=a.blocked_pages / a.pages,
            content_type_page_proportions={
                t: n / a.pages for t, n in sorted(a.type_pages.items())},
            mean_requests_per_page=a.requests_total / a.pages,
            mean_tracking_requests_per_page=a.tracking_requests_total / a.pages,
            content_length_stats=_summarize_lengths(a.page_lengths),
            top_sites=[list(kv) for kv in top_sites],
        ))
    trackers.sort(key=lambda t: (-t.reach, t.tracker_id))

    sites = []
    for digest in sorted(stats.site_accums):
        s = stats.site_accums[digest]
        top = sorted(s.tracker_pages.items(), key=lambda kv: (-kv[1], kv[0]))[:10]
        sites.append(SiteAggregate(
            hostname_digest=digest,
            pages=s.pages,
            avg_third_parties_per_page=s.tp_hostnames_total / s.pages,
            avg_trackers_per_page=s.trackers_total / s.pages,
            proportion_pages_with_tracking=s.tracking_pages / s.pages,
            proportion_all_secure=s.all_secure_pages / s.pages,
            category_mix={c: n / s.pages
                          for c, n in sorted(s.category_pages.items())},
            avg_third_party_content_length_mb=(
                s.content_length_total / s.pages / BYTES_PER_MB),
            top_trackers=[list(kv) for kv in top],
        ))
    sites.sort(key=lambda s: (-s.pages, s.hostname_digest))

    companies = []
    for company_id in sorted(stats.companies):
        c = stats.companies[company_id]
        companies.append(CompanyAggregate(
            company_id=company_id,
            tracker_ids=sorted(c.tracker_ids),
            pages=c.pages,
            reach=c.pages / pages,
            site_reach=len(c.sites) / n_sites,
            proportion_tracking_context=(c.tracking_pages / c.pages
                                         if c.pages else 0.0),
        ))
    companies.sort(key=lambda c: (-c.reach, c.company_id))

    by_category: dict[str, list[TrackerAggregate]] = {}
    for t in trackers:
        by_category.setdefault(t.category, []).append(t)
    categories = []
    for category in sorted(stats.category_pages):
        members = by_category.get(category, [])
        categories.append(CategoryAggregate(
            category=category,
            trackers=len(members),
            pages=stats.category_pages[category],
            mean_reach=(sum(m.reach for m in members) / len(members)
                        if members else 0.0),
            block_rate=(stats.category_blocked.get(category, 0)
                        / stats.category_pages[category]),
        ))

    matrix = {src: {dest: n / stats.matrix_rows[src]
                    for dest, n in sorted(row.items())}
              for src, row in sorted(stats.matrix_cells.items())}

    https = {
        "sites_all_secure": stats.all_secure_pages / pages,
        "trackers": {t.tracker_id: t.proportion_secure_context
                     for t in trackers},
    }

    site_mean_trackers = [s.avg_trackers_per_page for s in sites]
    summary = {
        "proportion_pages_with_tracking": stats.pages_with_tracking / pages,
        "mean_trackers_per_page_by_site": (
            sum(site_mean_trackers) / len(site_mean_trackers)),
        "mean_third_party_requests_per_page": stats.tp_requests_total / pages,
        "mean_tracking_requests_per_page": stats.tracking_requests_total / pages,
    }

    return AggregateReport(
        month=month,
        corpus_size=pages,
        distinct_sites=n_sites,
        summary=summary,
        trackers=trackers,
        sites=sites,
        companies=companies,
        categories=categories,
        country_matrix=matrix,
        https=https,
    )


def aggregate_month(corpus, db: TrackerDb,
                    month: MonthKey | None = None) -> AggregateReport:
    """Aggregate one month of sanitized page loads into a report.

    With ``month`` given, records outside it are ignored; otherwise the
    corpus must span a single calendar month.
    """
    if month is not None:
        corpus = [p for p in corpus if MonthKey.from_ms(p.started_at) == month]
    else:
        months = {MonthKey.from_ms(p.started_at) for p in corpus}
        if len(months) > 1:
            raise ValueError(
                f"corpus spans several months ({sorted(map(str, months))}); "
                f"pass month= or split first")
        month = months.pop() if months else None
    if not corpus or month is None:
        raise EmptyCorpus("no page loads in the requested month")
    stats = CorpusStats(db)
    for page in corpus:
        stats.add_page(page)
    return finalize(stats, month)
