"""k-anonymity test for URL-borne values.

A value transmitted in a query or parameter string counts as a unique
user identifier unless at least k distinct observers have reported the
same value. The store never holds raw values: values (and observer ids)
are reduced to the same truncated-MD5 digest the sanitizer uses.
Obfuscated identifiers are out of scope; the test assumes trackers send
values as-is.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

from .domains import ParsedUrl
from .errors import ParseError
from .sanitize import hash_truncated


@dataclass(frozen=True)
class QuorumConfig:
    """Threshold settings for the unsafe-value test.

    ``k`` counts distinct observers, the reporting client included, and
    a value is safe once the count reaches k. The default k is an
    operational knob, not a derived constant. Values shorter than
    ``min_value_length`` never reach the store.
    """

    k: int = 5
    min_value_length: int = 2
    window_days: int = 7

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.min_value_length < 1:
            raise ValueError("min_value_length must be >= 1")


def _split_pairs(raw: str, separator: str):
    for part in raw.split(separator):
        if not part:
            continue
        if "=" in part:
            key, value = part.split("=", 1)
        else:
            key, value = "_", part
        yield key, value


def extract_tokens(url: ParsedUrl, min_value_length: int = 1) -> list[tuple[str, str]]:
    """Key/value pairs carried by a URL's query and parameter strings.

    Bare tokens (no ``=``) get the key ``_``. Values shorter than
    ``min_value_length`` are dropped: they cannot carry enough entropy
    to identify anyone and would bloat the store.
    """
    tokens = []
    for raw, separator in ((url.query, "&"), (url.parameter_string, ";")):
        for key, value in _split_pairs(raw, separator):
            if len(value) >= min_value_length:
                tokens.append((key, value))
    return tokens


class QuorumStore:
    """Distinct-observer counts per (key, value-digest).

    Writes for one (key, digest) must be serialized by the caller; reads
    may run concurrently. Cardinalities only grow within a window, so a
    value that became safe stays safe until the window is reset.
    """

    def __init__(self, config: QuorumConfig | None = None):
        self.config = config or QuorumConfig()
        self._observers: dict[tuple[str, str], set[str]] = {}
        self._imported: dict[tuple[str, str], int] = {}

    def __len__(self) -> int:
        keys = set(self._observers) | set(self._imported)
        return len(keys)

    def observe(self, key: str, value: str, observer_id: str) -> None:
        """Count one observer for (key, value); idempotent per observer."""
        entry = (key, hash_truncated(value))
        self._observers.setdefault(entry, set()).add(
            hash_truncated(str(observer_id)))

    def cardinality(self, key: str, value: str) -> int:
        entry = (key, hash_truncated(value))
        live = len(self._observers.get(entry, ()))
        # Imported baselines cannot be deduplicated against live
        # observers, so take the max: undercounting only errs toward
        # treating values as unsafe.
        return max(live, self._imported.get(entry, 0))

    def is_safe(self, key: str, value: str) -> bool:
        """True iff at least k distinct observers reported this value."""
        return self.cardinality(key, value) >= self.config.k

    def classify_request(self, url: ParsedUrl) -> bool:
        """True iff the URL carries at least one unsafe token."""
        tokens = extract_tokens(url, self.config.min_value_length)
        return any(not self.is_safe(key, value) for key, value in tokens)

    def reset_window(self) -> None:
        """Start a new counting window; all cardinalities drop to zero."""
        self._observers.clear()
        self._imported.clear()

    def export_csv(self, path) -> int:
        """Persist (key, value-digest, cardinality) rows; returns row count."""
        entries = sorted(set(self._observers) | set(self._imported))
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["key", "value_digest", "cardinality"])
            for key, digest in entries:
                live = len(self._observers.get((key, digest), ()))
                card = max(live, self._imported.get((key, digest), 0))
                writer.writerow([key, digest, card])
        return len(entries)

    @classmethod
    def import_csv(cls, path, config: QuorumConfig | None = None) -> "QuorumStore":
        store = cls(config)
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            for lineno, row in enumerate(reader, start=1):
                if not row or row[0].startswith("#"):
                    continue
                if row == ["key", "value_digest", "cardinality"]:
                    continue
                if len(row) != 3:
                    raise ParseError("expected 'key,value_digest,cardinality'",
                                     line=lineno)
                try:
                    store._imported[(row[0], row[1])] = int(row[2])
                except ValueError as exc:
                    raise ParseError(f"bad cardinality {row[2]!r}",
                                     line=lineno) from exc
        return store


def observe(store: QuorumStore, key: str, value: str, observer_id: str) -> QuorumStore:
    store.observe(key, value, observer_id)
    return store


def is_safe(store: QuorumStore, key: str, value: str) -> bool:
    return store.is_safe(key, value)


def classify_request(url: ParsedUrl, store: QuorumStore) -> bool:
    return store.classify_request(url)
