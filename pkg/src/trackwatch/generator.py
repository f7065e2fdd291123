"""Synthetic request-event corpus generation.

The generator plays a population of users browsing a set of sites with
configurable tracker behavior, and emits three artifacts: the event log,
a tracker database covering the synthetic trackers, and a ground-truth
sidecar with the *realized* per-month counts (pages per tracker, context
pages, per-type pages, data-flow matrix). Realized counts, not the input
probabilities, are what the aggregate metrics must reproduce exactly;
the probabilities are recovered only within sampling error.

Everything is driven by one seeded RNG: the same spec and seed produce a
byte-identical log.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .errors import SpecError
from .probe import (RESOURCE_TYPES, STAGE_BEFORE_REQUEST,
                    STAGE_BEFORE_SEND_HEADERS, STAGE_HEADERS_RECEIVED,
                    STAGE_TAB_CLOSE, RequestEvent)
from .trackerdb import CATEGORIES, TrackerDb, TrackerDbEntry

#: Country blocks aligned with data/geo_table.csv. Host addresses are
#: drawn from the .0.x subnet of each block, clear of enclave overrides.
COUNTRY_PREFIXES = {
    "US": "10.10", "DE": "10.11", "FR": "10.12", "GB": "10.13",
    "IE": "10.14", "NL": "10.15", "RU": "10.16", "AU": "10.17",
    "JP": "10.18", "BR": "10.19",
}

_STATUS_CHOICES = ((200, 0.94), (302, 0.03), (404, 0.02), (500, 0.01))

_REQUEST_TYPES = tuple(t for t in RESOURCE_TYPES if t != "main_frame")


def _check_prob(value, name: str) -> float:
    try:
        p = float(value)
    except (TypeError, ValueError):
        raise SpecError(f"{name} must be a number, got {value!r}")
    if not 0.0 <= p <= 1.0:
        raise SpecError(f"{name} must be in [0, 1], got {p}")
    return p


def _check_dist(mapping, name: str) -> dict:
    if not isinstance(mapping, dict) or not mapping:
        raise SpecError(f"{name} must be a non-empty mapping")
    total = 0.0
    for key, weight in mapping.items():
        if float(weight) < 0:
            raise SpecError(f"{name}[{key}] must be >= 0")
        total += float(weight)
    if total <= 0:
        raise SpecError(f"{name} weights sum to zero")
    return {k: float(v) / total for k, v in mapping.items()}


@dataclass
class TrackerSpec:
    tracker_id: str
    hostname: str
    category: str = "advertising"
    company_id: str = ""
    inclusion: float | dict = 0.3
    include_with: str = ""
    content_types: dict = field(default_factory=lambda: {"script": 1.0})
    cookie_rate: float = 0.0
    identifier_rate: float = 0.0
    block_rate: float = 0.0
    external_block_rate: float = 0.0
    https_rate: float | dict = 1.0
    server_countries: dict = field(default_factory=lambda: {"US": 1.0})
    path: str = "/collect"
    content_length_mu: float = 10.3
    content_length_sigma: float = 1.0

    def __post_init__(self):
        if not self.tracker_id or not self.hostname:
            raise SpecError("tracker needs tracker_id and hostname")
        if self.category not in CATEGORIES:
            raise SpecError(f"unknown category {self.category!r}")
        if not self.company_id:
            self.company_id = self.tracker_id
        if not isinstance(self.inclusion, dict):
            _check_prob(self.inclusion, f"{self.tracker_id}.inclusion")
        else:
            for site, p in self.inclusion.items():
                _check_prob(p, f"{self.tracker_id}.inclusion[{site}]")
        if not self.content_types:
            raise SpecError(f"{self.tracker_id}: content_types is empty")
        for ctype, p in self.content_types.items():
            if ctype not in _REQUEST_TYPES:
                raise SpecError(f"{self.tracker_id}: bad content type "
                                f"{ctype!r}")
            _check_prob(p, f"{self.tracker_id}.content_types[{ctype}]")
        for name in ("cookie_rate", "identifier_rate", "block_rate",
                     "external_block_rate"):
            _check_prob(getattr(self, name), f"{self.tracker_id}.{name}")
        if isinstance(self.https_rate, dict):
            for m, p in self.https_rate.items():
                _check_prob(p, f"{self.tracker_id}.https_rate[{m}]")
        else:
            _check_prob(self.https_rate, f"{self.tracker_id}.https_rate")
        self.server_countries = _check_dist(
            self.server_countries, f"{self.tracker_id}.server_countries")
        for country in self.server_countries:
            if country not in COUNTRY_PREFIXES:
                raise SpecError(f"{self.tracker_id}: no prefix block for "
                                f"country {country!r}")

    def inclusion_for(self, site: str) -> float:
        if isinstance(self.inclusion, dict):
            return float(self.inclusion.get(site, self.inclusion.get("*", 0.0)))
        return float(self.inclusion)

    def https_for(self, month: str) -> float:
        if isinstance(self.https_rate, dict):
            return float(self.https_rate.get(month, self.https_rate.get("*", 1.0)))
        return float(self.https_rate)


@dataclass
class CorpusSpec:
    sites: int = 20
    site_popularity: str = "uniform"
    zipf_exponent: float = 1.2
    users: int = 50
    user_countries: dict = field(default_factory=lambda: {"US": 1.0})
    pages: int = 1000
    months: list = field(default_factory=lambda: ["2018-04"])
    first_party_requests: int = 2
    site_https_rate: float = 1.0
    benign_query_rate: float = 0.3
    trackers: list = field(default_factory=list)

    def __post_init__(self):
        if self.sites < 1 or self.users < 1 or self.pages < 1:
            raise SpecError("sites, users and pages must all be >= 1")
        if self.site_popularity not in ("uniform", "zipf"):
            raise SpecError(f"unknown popularity {self.site_popularity!r}")
        if not self.months:
            raise SpecError("months must be non-empty")
        for m in self.months:
            _parse_month(m)
        self.user_countries = _check_dist(self.user_countries,
                                          "user_countries")
        for country in self.user_countries:
            if country not in COUNTRY_PREFIXES:
                raise SpecError(f"no prefix block for country {country!r}")
        _check_prob(self.site_https_rate, "site_https_rate")
        _check_prob(self.benign_query_rate, "benign_query_rate")
        seen = set()
        for tracker in self.trackers:
            if tracker.tracker_id in seen:
                raise SpecError(f"duplicate tracker_id {tracker.tracker_id!r}")
            if tracker.include_with and tracker.include_with not in seen:
                raise SpecError(
                    f"{tracker.tracker_id}: include_with must name an "
                    f"earlier tracker")
            seen.add(tracker.tracker_id)

    @classmethod
    def from_dict(cls, data: dict) -> "CorpusSpec":
        if not isinstance(data, dict):
            raise SpecError("corpus spec must be a json object")
        data = dict(data)
        try:
            trackers = [TrackerSpec(**t) if not isinstance(t, TrackerSpec)
                        else t for t in data.pop("trackers", [])]
        except TypeError as exc:
            raise SpecError(f"bad tracker spec: {exc}") from exc
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise SpecError(f"unknown spec fields: {sorted(unknown)}")
        try:
            return cls(trackers=trackers, **data)
        except TypeError as exc:
            raise SpecError(str(exc)) from exc

    def to_dict(self) -> dict:
        data = {k: v for k, v in self.__dict__.items() if k != "trackers"}
        data["trackers"] = [dict(t.__dict__) for t in self.trackers]
        return data


def _parse_month(text: str) -> tuple[int, int]:
    try:
        year, month = text.split("-")
        year, month = int(year), int(month)
        if not 1 <= month <= 12:
            raise ValueError
        return year, month
    except (ValueError, AttributeError):
        raise SpecError(f"bad month {text!r}, expected YYYY-MM")


def _month_start_ms(text: str) -> int:
    year, month = _parse_month(text)
    return int(datetime(year, month, 1, tzinfo=timezone.utc).timestamp() * 1000)


class _MonthTruth:
    """Realized counts for one month, collected while events are emitted."""

    def __init__(self):
        self.pages = 0
        self.pages_per_site: dict[str, int] = {}
        self.all_tp_secure_pages = 0
        self.pages_with_tracking = 0
        self.trackers: dict[str, dict] = {}
        self.matrix_rows: dict[str, int] = {}
        self.matrix: dict[str, dict[str, int]] = {}

    def tracker(self, tracker_id: str) -> dict:
        if tracker_id not in self.trackers:
            self.trackers[tracker_id] = {
                "pages": 0, "sites": set(), "site_pages": {},
                "cookie_pages": 0, "fingerprint_pages": 0,
                "tracking_pages": 0, "secure_pages": 0, "blocked_pages": 0,
                "type_pages": {}, "requests": 0, "tracking_requests": 0,
            }
        return self.trackers[tracker_id]

    def to_dict(self) -> dict:
        trackers = {}
        for tid, t in sorted(self.trackers.items()):
            out = dict(t)
            out["sites"] = sorted(t["sites"])
            out["site_pages"] = dict(sorted(t["site_pages"].items()))
            out["type_pages"] = dict(sorted(t["type_pages"].items()))
            trackers[tid] = out
        return {
            "pages": self.pages,
            "pages_per_site": dict(sorted(self.pages_per_site.items())),
            "all_tp_secure_pages": self.all_tp_secure_pages,
            "pages_with_tracking": self.pages_with_tracking,
            "trackers": trackers,
            "matrix_rows": dict(sorted(self.matrix_rows.items())),
            "matrix": {src: dict(sorted(row.items()))
                       for src, row in sorted(self.matrix.items())},
        }


@dataclass
class GeneratedCorpus:
    events_path: Path
    truth_path: Path
    trackerdb_path: Path
    pages: int
    events: int


def _site_weights(spec: CorpusSpec) -> list[float]:
    if spec.site_popularity == "zipf":
        return [1.0 / (rank ** spec.zipf_exponent)
                for rank in range(1, spec.sites + 1)]
    return [1.0] * spec.sites


def _pick(rng: random.Random, dist: dict) -> str:
    keys = list(dist)
    return rng.choices(keys, weights=[dist[k] for k in keys], k=1)[0]


def _server_ip(rng: random.Random, country: str) -> str:
    return f"{COUNTRY_PREFIXES[country]}.0.{rng.randint(1, 254)}"


def synthetic_tracker_db(spec: CorpusSpec) -> TrackerDb:
    """Tracker DB covering the synthetic trackers at registrable depth."""
    db = TrackerDb(version="synthetic")
    seen = set()
    for t in spec.trackers:
        labels = t.hostname.split(".")
        pattern = ".".join(labels[-2:]) if len(labels) >= 2 else t.hostname
        if pattern in seen:
            pattern = t.hostname
        seen.add(pattern)
        db.add(TrackerDbEntry(pattern=pattern, tracker_id=t.tracker_id,
                              tracker_name=t.tracker_id,
                              company_id=t.company_id, category=t.category))
    return db


def generate_events(spec: CorpusSpec, seed: int):
    """Yield the event stream and collect truth; returns (events, truth)."""
    rng = random.Random(seed)
    sites = [f"site{i:03d}.com" for i in range(spec.sites)]
    weights = _site_weights(spec)
    users = [f"u{i:04d}" for i in range(spec.users)]
    user_country = {u: _pick(rng, spec.user_countries) for u in users}
    user_token = {u: f"{rng.getrandbits(48):012x}" for u in users}

    events: list[RequestEvent] = []
    truth: dict[str, _MonthTruth] = {}
    rid_counter = 0

    def next_rid() -> str:
        nonlocal rid_counter
        rid_counter += 1
        return f"r{rid_counter:08d}"

    for month in spec.months:
        month_truth = truth.setdefault(month, _MonthTruth())
        start_ms = _month_start_ms(month)
        span_ms = 25 * 86_400_000
        step = max(2000, span_ms // (spec.pages + 1))
        if step < 2000:
            raise SpecError("too many pages per month for the time grid")

        for page_index in range(spec.pages):
            t = start_ms + (page_index + 1) * step
            user = users[rng.randrange(spec.users)]
            site = rng.choices(sites, weights=weights, k=1)[0]
            page_scheme = "https" if rng.random() < spec.site_https_rate \
                else "http"
            path = f"/p{rng.randrange(5)}/item{rng.randrange(10)}"
            events.append(RequestEvent(
                stage=STAGE_BEFORE_REQUEST, tab_id=user, timestamp=t,
                request_id=next_rid(),
                url=f"{page_scheme}://{site}{path}",
                resource_type="main_frame", method="GET",
                client_id=user, client_country=user_country[user]))

            month_truth.pages += 1
            month_truth.pages_per_site[site] = \
                month_truth.pages_per_site.get(site, 0) + 1
            month_truth.matrix_rows[user_country[user]] = \
                month_truth.matrix_rows.get(user_country[user], 0) + 1

            offset = 10
            for i in range(spec.first_party_requests):
                rid = next_rid()
                url = f"{page_scheme}://{site}/static/a{i}.png"
                events.append(RequestEvent(
                    stage=STAGE_BEFORE_REQUEST, tab_id=user,
                    timestamp=t + offset, request_id=rid, url=url,
                    resource_type="image", method="GET",
                    is_main_frame_context=True))
                events.append(RequestEvent(
                    stage=STAGE_HEADERS_RECEIVED, tab_id=user,
                    timestamp=t + offset + 2, request_id=rid, url=url,
                    resource_type="image", method="GET",
                    is_main_frame_context=True, status_code=200,
                    content_length=rng.randint(200, 5000),
                    server_ip=_server_ip(rng, "US")))
                offset += 5

            included: dict[str, bool] = {}
            page_tracking = False
            page_dests: set[str] = set()
            page_all_https = True

            for tracker in spec.trackers:
                if tracker.include_with:
                    draw = included.get(tracker.include_with, False)
                else:
                    draw = rng.random() < tracker.inclusion_for(site)
                included[tracker.tracker_id] = draw
                if not draw:
                    continue
                fired = [ct for ct, p in tracker.content_types.items()
                         if rng.random() < p]
                if not fired:
                    included[tracker.tracker_id] = False
                    continue
                cookie = rng.random() < tracker.cookie_rate
                ident = rng.random() < tracker.identifier_rate
                https = rng.random() < tracker.https_for(month)
                scheme = "https" if https else "http"

                delivered = blocked_any = False
                for ctype in fired:
                    rid = next_rid()
                    query = []
                    if rng.random() < spec.benign_query_rate:
                        query.append("lang=en")
                    if ident:
                        query.append(f"uid={user_token[user]}")
                    url = f"{scheme}://{tracker.hostname}{tracker.path}"
                    if query:
                        url += "?" + "&".join(query)
                    method = "POST" if ctype == "beacon" else "GET"
                    base = dict(tab_id=user, request_id=rid, url=url,
                                resource_type=ctype, method=method,
                                is_main_frame_context=(ctype != "sub_frame"))
                    roll = rng.random()
                    if roll < tracker.block_rate:
                        events.append(RequestEvent(
                            stage=STAGE_BEFORE_REQUEST,
                            timestamp=t + offset,
                            blocked_by_host_extension=True, **base))
                        blocked_any = True
                    elif roll < tracker.block_rate + tracker.external_block_rate:
                        events.append(RequestEvent(
                            stage=STAGE_BEFORE_REQUEST,
                            timestamp=t + offset, **base))
                        blocked_any = True
                    else:
                        country = _pick(rng, tracker.server_countries)
                        status = rng.choices(
                            [s for s, _ in _STATUS_CHOICES],
                            weights=[w for _, w in _STATUS_CHOICES], k=1)[0]
                        length = int(rng.lognormvariate(
                            tracker.content_length_mu,
                            tracker.content_length_sigma))
                        events.append(RequestEvent(
                            stage=STAGE_BEFORE_REQUEST,
                            timestamp=t + offset, **base))
                        events.append(RequestEvent(
                            stage=STAGE_BEFORE_SEND_HEADERS,
                            timestamp=t + offset + 1,
                            cookies_sent=cookie, **base))
                        events.append(RequestEvent(
                            stage=STAGE_HEADERS_RECEIVED,
                            timestamp=t + offset + 3,
                            status_code=status, content_length=length,
                            set_cookie=cookie,
                            server_ip=_server_ip(rng, country), **base))
                        delivered = True
                        page_dests.add(country)
                    if not https:
                        page_all_https = False
                    offset += 5

                tt = month_truth.tracker(tracker.tracker_id)
                tt["pages"] += 1
                tt["sites"].add(site)
                tt["site_pages"][site] = tt["site_pages"].get(site, 0) + 1
                cookie_seen = cookie and delivered
                tt["cookie_pages"] += cookie_seen
                tt["fingerprint_pages"] += ident
                tracking = cookie_seen or ident
                tt["tracking_pages"] += tracking
                tt["secure_pages"] += https
                tt["blocked_pages"] += blocked_any
                for ctype in fired:
                    tt["type_pages"][ctype] = tt["type_pages"].get(ctype, 0) + 1
                tt["requests"] += len(fired)
                if tracking:
                    tt["tracking_requests"] += len(fired)
                    page_tracking = True

            if page_tracking:
                month_truth.pages_with_tracking += 1
            if page_all_https:
                month_truth.all_tp_secure_pages += 1
            row = month_truth.matrix.setdefault(user_country[user], {})
            for dest in page_dests:
                row[dest] = row.get(dest, 0) + 1

    final_ts = max((ev.timestamp for ev in events), default=0) + 1000
    for user in users:
        events.append(RequestEvent(stage=STAGE_TAB_CLOSE, tab_id=user,
                                   timestamp=final_ts))
    return events, truth


def generate_corpus(spec: CorpusSpec, seed: int, out_dir,
                    prefix: str = "corpus") -> GeneratedCorpus:
    """Write the event log, ground-truth sidecar and tracker DB files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    events, truth = generate_events(spec, seed)

    events_path = out / f"{prefix}-events.ndjson"
    with open(events_path, "w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(ev.to_line() + "\n")

    truth_path = out / f"{prefix}-truth.json"
    sidecar = {
        "seed": seed,
        "spec": spec.to_dict(),
        "months": {m: t.to_dict() for m, t in truth.items()},
    }
    with open(truth_path, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")

    trackerdb_path = out / f"{prefix}-trackerdb.csv"
    synthetic_tracker_db(spec).save(trackerdb_path)

    pages = sum(t.pages for t in truth.values())
    return GeneratedCorpus(events_path=events_path, truth_path=truth_path,
                           trackerdb_path=trackerdb_path, pages=pages,
                           events=len(events))
