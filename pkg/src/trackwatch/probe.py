"""Assemble request events into per-page-load tracking records.

A page load opens on a main_frame request in a tab, absorbs every
subsequent request for that tab, and closes when the next main_frame
request arrives for the tab, the tab closes, or the log ends. Request
metadata is observed at three lifecycle stages mirroring the browser's
webRequest hooks, and folded into per-third-party counters.
"""

from __future__ import annotations

import ipaddress
import json
from dataclasses import dataclass, field, replace

from .domains import SuffixList, parse_url, registrable_domain
from .errors import MalformedIp, ParseError, StageOrderViolation

STAGE_BEFORE_REQUEST = "before_request"
STAGE_BEFORE_SEND_HEADERS = "before_send_headers"
STAGE_HEADERS_RECEIVED = "headers_received"
STAGE_TAB_CLOSE = "tab_close"  # synthetic: a log replay needs an explicit close signal

STAGES = (
    STAGE_BEFORE_REQUEST,
    STAGE_BEFORE_SEND_HEADERS,
    STAGE_HEADERS_RECEIVED,
    STAGE_TAB_CLOSE,
)

RESOURCE_TYPES = (
    "main_frame",
    "sub_frame",
    "script",
    "image",
    "stylesheet",
    "font",
    "xhr",
    "beacon",
    "plugin",
    "media",
    "other",
)

STATUS_CLASSES = ("2xx", "3xx", "4xx", "5xx", "other")

UNKNOWN_COUNTRY = "--"


@dataclass
class RequestEvent:
    """One observed browser request at one lifecycle stage.

    Stage-specific fields (``cookies_sent``; ``status_code``,
    ``content_length``, ``from_cache``, ``set_cookie``, ``server_ip``)
    carry meaning only at their stage and default to falsy elsewhere.
    ``client_id`` and ``client_country`` are optional annotations on
    main_frame open events: a deployed probe knows its own user and
    region implicitly, a log replay needs them spelled out.
    """

    stage: str
    tab_id: str
    timestamp: int = 0
    request_id: str = ""
    url: str = ""
    resource_type: str = "other"
    method: str = "GET"
    is_main_frame_context: bool = True
    blocked_by_host_extension: bool = False
    cookies_sent: bool = False
    status_code: int = 0
    content_length: int = 0
    from_cache: bool = False
    set_cookie: bool = False
    server_ip: str = ""
    client_id: str = ""
    client_country: str = ""

    def to_dict(self) -> dict:
        data = {"stage": self.stage, "tab_id": self.tab_id,
                "timestamp": self.timestamp}
        if self.stage == STAGE_TAB_CLOSE:
            return data
        data.update(url=self.url, request_id=self.request_id,
                    resource_type=self.resource_type, method=self.method,
                    is_main_frame_context=self.is_main_frame_context)
        if self.blocked_by_host_extension:
            data["blocked_by_host_extension"] = True
        if self.stage == STAGE_BEFORE_SEND_HEADERS:
            data["cookies_sent"] = self.cookies_sent
        if self.stage == STAGE_HEADERS_RECEIVED:
            data.update(status_code=self.status_code,
                        content_length=self.content_length,
                        from_cache=self.from_cache,
                        set_cookie=self.set_cookie,
                        server_ip=self.server_ip)
        if self.client_id:
            data["client_id"] = self.client_id
        if self.client_country:
            data["client_country"] = self.client_country
        return data

    def to_line(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def parse_event(data: dict, line: int | None = None) -> RequestEvent:
    """Validate and build a RequestEvent from one decoded log record."""
    stage = data.get("stage")
    if stage not in STAGES:
        raise ParseError(f"unknown stage {stage!r}", line=line)
    if "tab_id" not in data:
        raise ParseError("missing tab_id", line=line)
    ev = RequestEvent(
        stage=stage,
        tab_id=str(data["tab_id"]),
        timestamp=int(data.get("timestamp", 0)),
    )
    if stage == STAGE_TAB_CLOSE:
        return ev
    if not data.get("url"):
        raise ParseError("missing url", line=line)
    resource_type = data.get("resource_type", "other")
    if resource_type not in RESOURCE_TYPES:
        raise ParseError(f"unknown resource_type {resource_type!r}", line=line)
    ev.url = data["url"]
    ev.request_id = str(data.get("request_id", ""))
    ev.resource_type = resource_type
    ev.method = data.get("method", "GET")
    ev.is_main_frame_context = bool(data.get("is_main_frame_context", True))
    ev.blocked_by_host_extension = bool(data.get("blocked_by_host_extension", False))
    ev.cookies_sent = bool(data.get("cookies_sent", False))
    ev.status_code = int(data.get("status_code", 0))
    ev.content_length = int(data.get("content_length", 0))
    ev.from_cache = bool(data.get("from_cache", False))
    ev.set_cookie = bool(data.get("set_cookie", False))
    ev.server_ip = data.get("server_ip", "")
    ev.client_id = str(data.get("client_id", ""))
    ev.client_country = data.get("client_country", "")
    return ev


def parse_event_line(text: str, line: int | None = None) -> RequestEvent:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid json: {exc}", line=line) from exc
    if not isinstance(data, dict):
        raise ParseError("event record must be a json object", line=line)
    return parse_event(data, line=line)


def read_event_log(path):
    """Yield (line_number, RequestEvent) for every non-blank log line."""
    with open(path, encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, start=1):
            text = text.strip()
            if not text:
                continue
            yield lineno, parse_event_line(text, line=lineno)


def _int_dict(d: dict) -> dict:
    return {k: int(v) for k, v in d.items()}


@dataclass
class ThirdPartyStats:
    """Counter bundle for one third-party hostname within one page load."""

    hostname: str
    count_before_request: int = 0
    count_headers_received: int = 0
    count_blocked: int = 0
    methods: dict = field(default_factory=lambda: {"get": 0, "post": 0})
    has_url_data: int = 0
    scheme_http: int = 0
    scheme_https: int = 0
    main_frame: int = 0
    sub_frame: int = 0
    content_types: dict = field(default_factory=dict)
    unsafe_identifier: int = 0
    cookies_sent: int = 0
    set_cookie: int = 0
    status_classes: dict = field(default_factory=dict)
    content_length_sum: int = 0
    from_cache: int = 0
    response_countries: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "hostname": self.hostname,
            "count_before_request": self.count_before_request,
            "count_headers_received": self.count_headers_received,
            "count_blocked": self.count_blocked,
            "methods": dict(self.methods),
            "has_url_data": self.has_url_data,
            "scheme_http": self.scheme_http,
            "scheme_https": self.scheme_https,
            "main_frame": self.main_frame,
            "sub_frame": self.sub_frame,
            "content_types": dict(self.content_types),
            "unsafe_identifier": self.unsafe_identifier,
            "cookies_sent": self.cookies_sent,
            "set_cookie": self.set_cookie,
            "status_classes": dict(self.status_classes),
            "content_length_sum": self.content_length_sum,
            "from_cache": self.from_cache,
            "response_countries": dict(self.response_countries),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ThirdPartyStats":
        kwargs = dict(data)
        for key in ("methods", "content_types", "status_classes",
                    "response_countries"):
            kwargs[key] = _int_dict(kwargs.get(key, {}))
        kwargs.setdefault("methods", {"get": 0, "post": 0})
        return cls(**kwargs)

    def replace_hostname(self, hostname: str) -> "ThirdPartyStats":
        return replace(self, hostname=hostname,
                       methods=dict(self.methods),
                       content_types=dict(self.content_types),
                       status_classes=dict(self.status_classes),
                       response_countries=dict(self.response_countries))


def merge_stats(a: ThirdPartyStats, b: ThirdPartyStats,
                hostname: str | None = None) -> ThirdPartyStats:
    """Counter-wise sum of two stat bundles (map fields merge by key)."""

    def add_maps(x: dict, y: dict) -> dict:
        out = dict(x)
        for k, v in y.items():
            out[k] = out.get(k, 0) + v
        return out

    return ThirdPartyStats(
        hostname=hostname if hostname is not None else a.hostname,
        count_before_request=a.count_before_request + b.count_before_request,
        count_headers_received=a.count_headers_received + b.count_headers_received,
        count_blocked=a.count_blocked + b.count_blocked,
        methods=add_maps(a.methods, b.methods),
        has_url_data=a.has_url_data + b.has_url_data,
        scheme_http=a.scheme_http + b.scheme_http,
        scheme_https=a.scheme_https + b.scheme_https,
        main_frame=a.main_frame + b.main_frame,
        sub_frame=a.sub_frame + b.sub_frame,
        content_types=add_maps(a.content_types, b.content_types),
        unsafe_identifier=a.unsafe_identifier + b.unsafe_identifier,
        cookies_sent=a.cookies_sent + b.cookies_sent,
        set_cookie=a.set_cookie + b.set_cookie,
        status_classes=add_maps(a.status_classes, b.status_classes),
        content_length_sum=a.content_length_sum + b.content_length_sum,
        from_cache=a.from_cache + b.from_cache,
        response_countries=add_maps(a.response_countries, b.response_countries),
    )


@dataclass
class PageLoadRecord:
    """One main-frame navigation with its third-party counter set.

    Hostname and path stay raw until the sanitizer runs; this type never
    leaves the process unsanitized.
    """

    protocol: str
    hostname: str
    path: str
    started_at: int
    third_parties: dict = field(default_factory=dict)
    source_country: str = UNKNOWN_COUNTRY
    client_id: str = ""
    tab_id: str = ""
    closed_at: int = 0
    # request ids that passed before_request, for stage-order enforcement
    _seen_requests: set = field(default_factory=set, repr=False)


class GeoTable:
    """Static longest-prefix-match table from IP networks to ISO2 codes."""

    def __init__(self, entries=()):
        self._v4: list[tuple] = []
        self._v6: list[tuple] = []
        for prefix, iso2 in entries:
            self.add(prefix, iso2)

    def add(self, prefix: str, iso2: str) -> None:
        network = ipaddress.ip_network(prefix, strict=False)
        bucket = self._v4 if network.version == 4 else self._v6
        bucket.append((network, iso2.upper()))
        bucket.sort(key=lambda e: -e[0].prefixlen)

    def __len__(self) -> int:
        return len(self._v4) + len(self._v6)

    def lookup(self, ip) -> str:
        bucket = self._v4 if ip.version == 4 else self._v6
        for network, iso2 in bucket:
            if ip in network:
                return iso2
        return UNKNOWN_COUNTRY

    @classmethod
    def load(cls, path) -> "GeoTable":
        table = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#") or line == "prefix,iso2":
                    continue
                parts = line.split(",")
                if len(parts) != 2:
                    raise ParseError("expected 'prefix,iso2'", line=lineno)
                try:
                    table.add(parts[0].strip(), parts[1].strip())
                except ValueError as exc:
                    raise ParseError(str(exc), line=lineno) from exc
        return table


def resolve_country(ip: str, table: GeoTable) -> str:
    """ISO2 country for an IP literal; ``--`` when no prefix matches."""
    try:
        addr = ipaddress.ip_address(ip)
    except ValueError as exc:
        raise MalformedIp(f"not an ip literal: {ip!r}") from exc
    return table.lookup(addr)


def open_pageload(ev: RequestEvent) -> PageLoadRecord:
    """Start a record from a main_frame before_request event."""
    parsed = parse_url(ev.url)
    return PageLoadRecord(
        protocol=parsed.scheme,
        hostname=parsed.hostname,
        path=parsed.path,
        started_at=ev.timestamp,
        source_country=ev.client_country or UNKNOWN_COUNTRY,
        client_id=ev.client_id or ev.tab_id,
        tab_id=ev.tab_id,
    )


def _status_class(code: int) -> str:
    family = code // 100
    return f"{family}xx" if family in (2, 3, 4, 5) else "other"


def record_event(page: PageLoadRecord, ev: RequestEvent, suffixes: SuffixList,
                 quorum, geo_table: GeoTable | None = None) -> PageLoadRecord:
    """Fold one non-main_frame event into the open page's counters.

    First-party requests (same registrable domain as the page) are
    ignored. ``quorum`` provides the unsafe-identifier test for URL
    tokens; ``geo_table`` resolves response-server countries.
    """
    parsed = parse_url(ev.url)
    if registrable_domain(parsed.hostname, suffixes).value == \
            registrable_domain(page.hostname, suffixes).value:
        return page
    stats = page.third_parties.get(parsed.hostname)
    if stats is None:
        stats = ThirdPartyStats(hostname=parsed.hostname)
        page.third_parties[parsed.hostname] = stats

    if ev.blocked_by_host_extension:
        stats.count_blocked += 1

    if ev.stage == STAGE_BEFORE_REQUEST:
        page._seen_requests.add(ev.request_id)
        stats.count_before_request += 1
        method = ev.method.lower()
        if method in stats.methods:
            stats.methods[method] += 1
        if parsed.scheme == "http":
            stats.scheme_http += 1
        elif parsed.scheme == "https":
            stats.scheme_https += 1
        if ev.is_main_frame_context:
            stats.main_frame += 1
        else:
            stats.sub_frame += 1
        stats.content_types[ev.resource_type] = \
            stats.content_types.get(ev.resource_type, 0) + 1
        if parsed.query or parsed.parameter_string:
            stats.has_url_data += 1
        if quorum is not None and quorum.classify_request(parsed):
            stats.unsafe_identifier += 1
    elif ev.stage == STAGE_BEFORE_SEND_HEADERS:
        if ev.cookies_sent:
            stats.cookies_sent += 1
    elif ev.stage == STAGE_HEADERS_RECEIVED:
        if ev.request_id not in page._seen_requests:
            raise StageOrderViolation(
                f"headers_received before before_request for "
                f"request {ev.request_id!r}")
        stats.count_headers_received += 1
        sc = _status_class(ev.status_code)
        stats.status_classes[sc] = stats.status_classes.get(sc, 0) + 1
        stats.content_length_sum += max(0, ev.content_length)
        if ev.from_cache:
            stats.from_cache += 1
        if ev.set_cookie:
            stats.set_cookie += 1
        if geo_table is not None:
            country = resolve_country(ev.server_ip, geo_table) \
                if ev.server_ip else UNKNOWN_COUNTRY
            stats.response_countries[country] = \
                stats.response_countries.get(country, 0) + 1
    return page


def external_block_signal(tp: ThirdPartyStats) -> int:
    """Requests that vanished between before_request and headers_received.

    The gap, after subtracting blocks by the hosting extension itself,
    indicates blocking by the network or another extension.
    """
    return max(0, tp.count_before_request - tp.count_headers_received
               - tp.count_blocked)


class PageLoadAssembler:
    """Streaming assembler: feed events in log order, collect page loads.

    Per-tab state has a single writer; records returned by ``feed`` and
    ``flush`` are finished and safe to hand elsewhere. Events for tabs
    without an open page load are dropped (counted, not raised): they
    belong to navigations that started before the log did.
    """

    def __init__(self, suffixes: SuffixList, quorum=None,
                 geo_table: GeoTable | None = None):
        self.suffixes = suffixes
        self.quorum = quorum
        self.geo_table = geo_table
        self.dropped_events = 0
        self.dropped_pages = 0
        self._open: dict[str, PageLoadRecord] = {}

    def feed(self, ev: RequestEvent) -> list[PageLoadRecord]:
        if ev.stage == STAGE_TAB_CLOSE:
            return self._close_tab(ev.tab_id, ev.timestamp)
        if ev.resource_type == "main_frame":
            if ev.stage != STAGE_BEFORE_REQUEST:
                return []
            emitted = self._close_tab(ev.tab_id, ev.timestamp)
            page = open_pageload(ev)
            if page.protocol not in ("http", "https"):
                self.dropped_pages += 1
                return emitted
            self._open[ev.tab_id] = page
            return emitted
        page = self._open.get(ev.tab_id)
        if page is None:
            self.dropped_events += 1
            return []
        record_event(page, ev, self.suffixes, self.quorum, self.geo_table)
        return []

    def flush(self, timestamp: int | None = None) -> list[PageLoadRecord]:
        """Close every open tab, in tab order, and return the records."""
        emitted = []
        for tab_id in sorted(self._open):
            emitted.extend(self._close_tab(tab_id, timestamp))
        return emitted

    def _close_tab(self, tab_id: str, timestamp: int | None) -> list[PageLoadRecord]:
        page = self._open.pop(tab_id, None)
        if page is None:
            return []
        page.closed_at = timestamp if timestamp is not None else page.started_at
        return [page]
