"""Curated mapping of domains and subdomains to trackers and companies.

Patterns are hostname suffixes; lookup returns the entry matching with
the greatest label depth, so a mapping for ``a.example.com`` beats the
``example.com`` catch-all for hosts below it. This is what lets one
infrastructure domain (a CDN, say) be split between the services that
actually operate on its subdomains.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from .errors import DuplicatePattern, ParseError, UnknownTracker

CATEGORIES = (
    "advertising",
    "site_analytics",
    "social_media",
    "cdn",
    "essential",
    "audio_video_player",
    "hosting",
    "customer_interaction",
    "misc",
    "extensions_mitm",
    "unknown",
)

_HEADER = ["pattern", "tracker_id", "tracker_name", "company_id", "category"]


@dataclass(frozen=True)
class TrackerDbEntry:
    pattern: str
    tracker_id: str
    tracker_name: str
    company_id: str
    category: str


class TrackerDb:
    """Suffix-tree index over tracker domain patterns."""

    def __init__(self, version: str = "unversioned"):
        self.version = version
        self._entries: dict[str, TrackerDbEntry] = {}
        self._tree: dict = {}
        self._companies: dict[str, str] = {}

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self) -> list[TrackerDbEntry]:
        return [self._entries[p] for p in sorted(self._entries)]

    def tracker_ids(self) -> list[str]:
        return sorted({e.tracker_id for e in self._entries.values()})

    def add(self, entry: TrackerDbEntry) -> None:
        if entry.pattern in self._entries:
            raise DuplicatePattern(entry.pattern)
        self._entries[entry.pattern] = entry
        node = self._tree
        for label in reversed(entry.pattern.split(".")):
            node = node.setdefault(label, {})
        node[None] = entry
        self._companies[entry.tracker_id] = entry.company_id

    def match(self, hostname: str) -> TrackerDbEntry | None:
        """Deepest-suffix entry for a hostname, or None."""
        node = self._tree
        best = None
        for label in reversed(hostname.lower().rstrip(".").split(".")):
            node = node.get(label)
            if node is None:
                break
            if None in node:
                best = node[None]
        return best

    def company(self, tracker_id: str) -> str:
        if tracker_id not in self._companies:
            raise UnknownTracker(tracker_id)
        return self._companies[tracker_id]

    def serialize(self) -> str:
        """Canonical CSV form: version pragma, header, sorted patterns."""
        buf = io.StringIO()
        buf.write(f"# version: {self.version}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(_HEADER)
        for entry in self.entries:
            writer.writerow([entry.pattern, entry.tracker_id,
                             entry.tracker_name, entry.company_id,
                             entry.category])
        return buf.getvalue()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.serialize())


def load_db_lines(lines, source: str = "<memory>") -> TrackerDb:
    db = TrackerDb()
    saw_header = False
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line[1:].strip().startswith("version:"):
                db.version = line[1:].split(":", 1)[1].strip()
            continue
        row = next(csv.reader([line]))
        if row == _HEADER:
            saw_header = True
            continue
        if len(row) != len(_HEADER):
            raise ParseError(
                f"{source}: expected {len(_HEADER)} columns, got {len(row)}",
                line=lineno)
        pattern, tracker_id, tracker_name, company_id, category = \
            [cell.strip() for cell in row]
        if not pattern or pattern.startswith(".") or pattern.endswith("."):
            raise ParseError(f"{source}: bad pattern {pattern!r}", line=lineno)
        if category not in CATEGORIES:
            raise ParseError(f"{source}: unknown category {category!r}",
                             line=lineno)
        try:
            db.add(TrackerDbEntry(pattern=pattern.lower(),
                                  tracker_id=tracker_id,
                                  tracker_name=tracker_name,
                                  company_id=company_id,
                                  category=category))
        except DuplicatePattern:
            raise DuplicatePattern(f"{source}: duplicate pattern "
                                   f"{pattern!r} at line {lineno}")
    if not saw_header and len(db) == 0:
        raise ParseError(f"{source}: empty database (missing header?)")
    return db


def load_db(path) -> TrackerDb:
    """Load and index a tracker database CSV; rejects duplicate patterns."""
    with open(path, encoding="utf-8") as fh:
        return load_db_lines(fh, source=str(path))


def match_domain(db: TrackerDb, hostname: str) -> TrackerDbEntry | None:
    return db.match(hostname)


def company_of(db: TrackerDb, tracker_id: str) -> str:
    return db.company(tracker_id)
