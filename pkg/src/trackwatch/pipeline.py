"""End-to-end runs: event log in, monthly report files out.

Stage order: a quorum warm-up pass over the whole log, then page
assembly with identifier classification against the warmed store, then
sanitization, then the transport simulation, then per-month aggregation.
The warm-up pass exists because a deployed probe queries an always-warm
population store; a desk replay has to reconstruct that store before it
can classify the very first event.

Runs are deterministic: with a fixed seed the report bytes, the manifest
and the collector log reproduce exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from . import __version__
from .aggregate import AggregateReport, aggregate_month, split_by_month
from .domains import SuffixList, parse_url
from .errors import (ConfigError, EmptyCorpus, ParseError, TrackwatchError,
                     UnknownEntity)
from .probe import (GeoTable, PageLoadAssembler, read_event_log,
                    STAGE_BEFORE_REQUEST, STAGE_TAB_CLOSE)
from .quorum import QuorumConfig, QuorumStore, extract_tokens
from .sanitize import load_cleaning_rules, sanitize
from .trackerdb import TrackerDb, load_db
from .transport import ClientChannel, run_simulation


def bundled_data_path(name: str) -> Path:
    return Path(str(resources.files("trackwatch.data").joinpath(name)))


@dataclass
class PipelineConfig:
    """Everything a run needs; all file paths must exist up front."""

    suffix_list: str | None = None
    tracker_db: str | None = None
    cleaning_rules: str | None = None
    geo_table: str | None = None
    quorum_k: int = 5
    quorum_min_value_length: int = 2
    quorum_window_days: int = 7
    hash_truncation_bytes: int = 8
    proxies: int = 4
    delay_min_ms: int = 0
    delay_max_ms: int = 30_000
    seed: int = 0
    month: str | None = None

    def __post_init__(self):
        if self.quorum_k < 2:
            raise ConfigError("quorum_k must be >= 2")
        if self.quorum_min_value_length < 1:
            raise ConfigError("quorum_min_value_length must be >= 1")
        if self.hash_truncation_bytes < 1 or self.hash_truncation_bytes > 16:
            raise ConfigError("hash_truncation_bytes must be in 1..16")
        if self.proxies < 1:
            raise ConfigError("proxies must be >= 1")
        if self.delay_max_ms < self.delay_min_ms or self.delay_min_ms < 0:
            raise ConfigError("need 0 <= delay_min_ms <= delay_max_ms")
        for name in ("suffix_list", "tracker_db", "cleaning_rules",
                     "geo_table"):
            value = getattr(self, name)
            if value is not None and not Path(value).is_file():
                raise ConfigError(f"{name} file not found: {value}")

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def load_inputs(self) -> "PipelineInputs":
        suffixes = SuffixList.load(self.suffix_list) if self.suffix_list \
            else SuffixList.bundled()
        db = load_db(self.tracker_db if self.tracker_db
                     else bundled_data_path("tracker_db.csv"))
        rules = load_cleaning_rules(
            self.cleaning_rules if self.cleaning_rules
            else bundled_data_path("cleaning_rules.csv"))
        geo = GeoTable.load(self.geo_table if self.geo_table
                            else bundled_data_path("geo_table.csv"))
        return PipelineInputs(suffixes=suffixes, db=db, rules=rules, geo=geo)


@dataclass
class PipelineInputs:
    suffixes: SuffixList
    db: TrackerDb
    rules: list
    geo: GeoTable


@dataclass
class RunResult:
    out_dir: Path
    months: list
    report_paths: dict
    manifest_path: Path
    sanitized_path: Path
    events: int
    pages: int
    dropped_events: int
    reports: dict = field(default_factory=dict, repr=False)


def _client_seed(seed: int, client_id: str) -> int:
    digest = hashlib.md5(f"{seed}:{client_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def build_quorum_store(event_log, config: QuorumConfig) -> QuorumStore:
    """Warm-up pass: observe every URL token in the log.

    The observer for an event is the client that owns its tab, falling
    back to the tab id itself when a log carries no client annotations.
    """
    store = QuorumStore(config)
    tab_client: dict[str, str] = {}
    for lineno, ev in read_event_log(event_log):
        if ev.stage == STAGE_TAB_CLOSE:
            continue
        if ev.client_id:
            tab_client[ev.tab_id] = ev.client_id
        observer = tab_client.get(ev.tab_id, ev.tab_id)
        try:
            url = parse_url(ev.url)
        except TrackwatchError as exc:
            raise ParseError(f"quorum stage: {exc}", line=lineno) from exc
        for key, value in extract_tokens(url, config.min_value_length):
            store.observe(key, value, observer)
    return store


def assemble_pages(event_log, inputs: PipelineInputs,
                   store: QuorumStore) -> tuple[list, PageLoadAssembler]:
    """Probe pass: replay the log into closed page-load records."""
    assembler = PageLoadAssembler(inputs.suffixes, quorum=store,
                                  geo_table=inputs.geo)
    pages = []
    last_ts = 0
    for lineno, ev in read_event_log(event_log):
        last_ts = max(last_ts, ev.timestamp)
        try:
            pages.extend(assembler.feed(ev))
        except TrackwatchError as exc:
            raise ParseError(f"probe stage: {exc}", line=lineno) from exc
    pages.extend(assembler.flush(last_ts))
    return pages, assembler


def run_pipeline(config: PipelineConfig, event_log, out_dir) -> RunResult:
    """Execute probe -> quorum -> sanitize -> transport -> aggregate."""
    event_log = Path(event_log)
    if not event_log.is_file():
        raise ConfigError(f"event log not found: {event_log}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    inputs = config.load_inputs()

    quorum_config = QuorumConfig(k=config.quorum_k,
                                 min_value_length=config.quorum_min_value_length,
                                 window_days=config.quorum_window_days)
    store = build_quorum_store(event_log, quorum_config)

    events = sum(1 for _ in read_event_log(event_log))
    if events == 0:
        raise EmptyCorpus("event log contains no events")

    pages, assembler = assemble_pages(event_log, inputs, store)
    if not pages:
        raise EmptyCorpus("event log produced no page loads")

    sanitized_records = [
        sanitize(page, inputs.rules, inputs.suffixes,
                 truncation_bytes=config.hash_truncation_bytes)
        for page in pages
    ]

    client_ids = sorted({page.client_id for page in pages})
    client_index = {cid: i for i, cid in enumerate(client_ids)}
    channels = [ClientChannel(cid, delay_min=config.delay_min_ms,
                              delay_max=config.delay_max_ms,
                              rng_seed=_client_seed(config.seed, cid))
                for cid in client_ids]
    messages = [(client_index[page.client_id], record,
                 page.closed_at or page.started_at)
                for page, record in zip(pages, sanitized_records)]
    result = run_simulation(channels, config.proxies, messages,
                            seal_seed=config.seed)
    corpus = [entry.payload for entry in result.collector_log]

    sanitized_path = out / "sanitized.ndjson"
    with open(sanitized_path, "w", encoding="utf-8") as fh:
        for record in corpus:
            fh.write(json.dumps(record.to_dict(), sort_keys=True,
                                separators=(",", ":")) + "\n")

    by_month = split_by_month(corpus)
    if config.month is not None:
        wanted = {str(m): m for m in by_month}
        if config.month not in wanted:
            raise EmptyCorpus(f"no page loads in month {config.month}")
        by_month = {wanted[config.month]: by_month[wanted[config.month]]}

    report_paths: dict[str, dict] = {}
    reports: dict[str, AggregateReport] = {}
    for month, month_corpus in by_month.items():
        report = aggregate_month(month_corpus, inputs.db, month=month)
        reports[str(month)] = report
        report_paths[str(month)] = write_report_files(report, out)

    manifest = {
        "tool": "trackwatch",
        "version": __version__,
        "config": config.to_dict(),
        "seed": config.seed,
        "suffix_list_version": inputs.suffixes.source_version,
        "tracker_db_version": inputs.db.version,
        "event_log": str(event_log),
        "events": events,
        "pages": len(pages),
        "dropped_events": assembler.dropped_events,
        "dropped_pages": assembler.dropped_pages,
        "clients": len(client_ids),
        "proxy_message_counts": [len(log) for log in result.proxy_logs],
        "months": {m: {"pages": r.corpus_size,
                       "files": report_paths[m]}
                   for m, r in reports.items()},
    }
    manifest_path = out / "run-manifest.json"
    _write_json(manifest_path, manifest)

    return RunResult(
        out_dir=out,
        months=sorted(reports),
        report_paths=report_paths,
        manifest_path=manifest_path,
        sanitized_path=sanitized_path,
        events=events,
        pages=len(pages),
        dropped_events=assembler.dropped_events,
        reports=reports,
    )


def _write_json(path: Path, data: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


TRACKER_COLUMNS = [
    "tracker_id", "tracker_name", "company_id", "category", "pages_seen",
    "sites_seen", "reach", "site_reach", "reach_ratio",
    "proportion_cookie_context", "proportion_fingerprint_context",
    "proportion_tracking_context", "proportion_secure_context",
    "proportion_blocked", "mean_requests_per_page",
    "mean_tracking_requests_per_page", "median_content_length_mb",
    "iqr_low_mb", "iqr_high_mb",
]

SITE_COLUMNS = [
    "hostname_digest", "pages", "avg_third_parties_per_page",
    "avg_trackers_per_page", "proportion_pages_with_tracking",
    "proportion_all_secure", "avg_third_party_content_length_mb",
]

COMPANY_COLUMNS = [
    "company_id", "tracker_ids", "pages", "reach", "site_reach",
    "proportion_tracking_context",
]

MATRIX_COLUMNS = ["from_country", "to_country", "fraction_of_pages"]


def write_report_files(report: AggregateReport, out_dir: Path) -> dict:
    """Write the month's JSON document and its CSV tables."""
    month = str(report.month)
    files = {}

    json_path = out_dir / f"report-{month}.json"
    _write_json(json_path, report.to_dict())
    files["report"] = json_path.name

    trackers_path = out_dir / f"trackers-{month}.csv"
    with open(trackers_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACKER_COLUMNS)
        for t in report.trackers:
            cls = t.content_length_stats
            writer.writerow([
                t.tracker_id, t.tracker_name, t.company_id, t.category,
                t.pages_seen, t.sites_seen, t.reach, t.site_reach,
                "" if t.reach_ratio is None else t.reach_ratio,
                t.proportion_cookie_context, t.proportion_fingerprint_context,
                t.proportion_tracking_context, t.proportion_secure_context,
                t.proportion_blocked, t.mean_requests_per_page,
                t.mean_tracking_requests_per_page, cls.median_mb,
                cls.iqr_low_mb, cls.iqr_high_mb,
            ])
    files["trackers"] = trackers_path.name

    sites_path = out_dir / f"sites-{month}.csv"
    with open(sites_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SITE_COLUMNS)
        for s in report.sites:
            writer.writerow([
                s.hostname_digest, s.pages, s.avg_third_parties_per_page,
                s.avg_trackers_per_page, s.proportion_pages_with_tracking,
                s.proportion_all_secure, s.avg_third_party_content_length_mb,
            ])
    files["sites"] = sites_path.name

    companies_path = out_dir / f"companies-{month}.csv"
    with open(companies_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COMPANY_COLUMNS)
        for c in report.companies:
            writer.writerow([
                c.company_id, " ".join(c.tracker_ids), c.pages, c.reach,
                c.site_reach, c.proportion_tracking_context,
            ])
    files["companies"] = companies_path.name

    matrix_path = out_dir / f"country-matrix-{month}.csv"
    with open(matrix_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MATRIX_COLUMNS)
        for src, row in report.country_matrix.items():
            for dest, fraction in row.items():
                writer.writerow([src, dest, fraction])
    files["country_matrix"] = matrix_path.name

    return files


def inspect_report(report_path, kind: str, entity_id: str) -> dict:
    """Entity profile (tracker, site or company) from a report file."""
    path = Path(report_path)
    if not path.is_file():
        raise ConfigError(f"report not found: {path}")
    with open(path, encoding="utf-8") as fh:
        report = json.load(fh)

    if kind == "tracker":
        for t in report["trackers"]:
            if t["tracker_id"] == entity_id:
                return {"kind": "tracker", "month": report["month"], **t}
        raise UnknownEntity(f"tracker {entity_id!r} not in report")
    if kind == "site":
        for s in report["sites"]:
            if s["hostname_digest"] == entity_id:
                return {"kind": "site", "month": report["month"], **s}
        raise UnknownEntity(f"site {entity_id!r} not in report")
    if kind == "company":
        for c in report["companies"]:
            if c["company_id"] == entity_id:
                members = [t for t in report["trackers"]
                           if t["company_id"] == entity_id]
                profile = {"kind": "company", "month": report["month"], **c}
                profile["trackers"] = [
                    {"tracker_id": t["tracker_id"], "reach": t["reach"],
                     "site_reach": t["site_reach"],
                     "proportion_tracking_context":
                         t["proportion_tracking_context"]}
                    for t in members
                ]
                return profile
        raise UnknownEntity(f"company {entity_id!r} not in report")
    raise ConfigError(f"unknown inspect kind {kind!r}")
