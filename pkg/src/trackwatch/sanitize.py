"""Privacy sanitization applied to page-load records before transport.

First-party hostname and path are reduced to truncated hashes, paths are
cut to their first level before hashing, third-party hostnames are
truncated to TLD+2 and passed through curated cleaning rules that strip
identifier-bearing subdomains. A separate detector proposes new cleaning
rules from subdomain-cardinality statistics; candidates are for manual
review, never auto-applied.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field

from .domains import SuffixList, first_level_path, registrable_domain, truncate_tld2
from .errors import ParseError
from .probe import PageLoadRecord, ThirdPartyStats, merge_stats

#: Hex-character length of a truncated digest with the default 8-byte cut.
DEFAULT_TRUNCATION_BYTES = 8

#: Label substituted for identifier-bearing subdomains by cleaning rules.
CLEANED_LABEL = "___"


def hash_truncated(value: str, truncation_bytes: int = DEFAULT_TRUNCATION_BYTES) -> str:
    """Lowercase hex of the first ``truncation_bytes`` bytes of MD5(value).

    Truncation does not add cryptographic strength; it provides plausible
    deniability about the values in the data while keeping popular-site
    digests recoverable through a reverse dictionary.
    """
    return hashlib.md5(value.encode("utf-8")).hexdigest()[: truncation_bytes * 2]


@dataclass(frozen=True)
class CleaningRule:
    """Rewrite stripping the subdomain portion below a target domain.

    The leading labels are replaced with a constant placeholder rather
    than deleted, preserving the TLD+2 shape for aggregation. Applying a
    rule twice equals applying it once.
    """

    target_domain: str
    action: str = "replace_subdomain"

    def apply(self, hostname: str) -> str:
        if hostname == self.target_domain:
            return hostname
        if hostname.endswith("." + self.target_domain):
            return f"{CLEANED_LABEL}.{self.target_domain}"
        return hostname


@dataclass
class SanitizedPageLoad:
    """Transport-ready page load: digests instead of first-party strings.

    ``started_at`` and ``source_country`` survive sanitization at month
    and country granularity; both are required by the aggregate reports.
    """

    protocol: str
    hostname_digest: str
    path_digest: str
    started_at: int
    third_parties: list[ThirdPartyStats] = field(default_factory=list)
    source_country: str = "--"

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "hostname_digest": self.hostname_digest,
            "path_digest": self.path_digest,
            "started_at": self.started_at,
            "source_country": self.source_country,
            "third_parties": [tp.to_dict() for tp in self.third_parties],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SanitizedPageLoad":
        return cls(
            protocol=data["protocol"],
            hostname_digest=data["hostname_digest"],
            path_digest=data["path_digest"],
            started_at=data["started_at"],
            source_country=data.get("source_country", "--"),
            third_parties=[ThirdPartyStats.from_dict(d)
                           for d in data["third_parties"]],
        )


def sanitize(page: PageLoadRecord, rules: list[CleaningRule],
             suffixes: SuffixList,
             truncation_bytes: int = DEFAULT_TRUNCATION_BYTES) -> SanitizedPageLoad:
    """Apply all client-side mitigations to one closed page load.

    The first-party hostname is hashed whole; the path is truncated to
    its first level before hashing. Third-party hostnames are truncated
    to TLD+2 and rule-cleaned; stats that collapse onto the same hostname
    are merged by counter-wise addition, so no counts are lost.
    """
    merged: dict[str, ThirdPartyStats] = {}
    for tp in page.third_parties.values():
        hostname = truncate_tld2(tp.hostname, suffixes)
        for rule in rules:
            hostname = rule.apply(hostname)
        if hostname in merged:
            merged[hostname] = merge_stats(merged[hostname], tp, hostname=hostname)
        else:
            merged[hostname] = tp.replace_hostname(hostname)
    return SanitizedPageLoad(
        protocol=page.protocol,
        hostname_digest=hash_truncated(page.hostname, truncation_bytes),
        path_digest=hash_truncated(first_level_path(page.path), truncation_bytes),
        started_at=page.started_at,
        source_country=page.source_country,
        third_parties=[merged[h] for h in sorted(merged)],
    )


def detect_high_cardinality(corpus, suffixes: SuffixList,
                            threshold: int = 100,
                            window_days: int = 7) -> list[CleaningRule]:
    """Propose cleaning rules for domains with many distinct subdomains.

    A registrable domain becomes a candidate when its distinct TLD+2
    subdomain count reaches ``threshold`` in at least two separate time
    windows — high cardinality that persists over time is the signature
    of per-user hostnames. Candidates require manual review before being
    shipped as rules.
    """
    window_ms = window_days * 86_400_000
    seen: dict[int, dict[str, set[str]]] = {}
    for page in corpus:
        window = page.started_at // window_ms
        per_domain = seen.setdefault(window, {})
        for tp in page.third_parties.values():
            base = registrable_domain(tp.hostname, suffixes).value
            per_domain.setdefault(base, set()).add(
                truncate_tld2(tp.hostname, suffixes))
    windows_over: dict[str, int] = {}
    for per_domain in seen.values():
        for base, subdomains in per_domain.items():
            if len(subdomains) >= threshold:
                windows_over[base] = windows_over.get(base, 0) + 1
    return [CleaningRule(target_domain=base)
            for base in sorted(windows_over) if windows_over[base] >= 2]


def load_cleaning_rules(path) -> list[CleaningRule]:
    """Read cleaning rules from a ``target_domain,action`` CSV."""
    rules = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].startswith("#"):
                continue
            if row[0] == "target_domain":
                continue
            if len(row) != 2:
                raise ParseError("expected 'target_domain,action'", line=lineno)
            if row[1] != "replace_subdomain":
                raise ParseError(f"unknown action {row[1]!r}", line=lineno)
            rules.append(CleaningRule(target_domain=row[0].strip().lower(),
                                      action=row[1]))
    return rules
