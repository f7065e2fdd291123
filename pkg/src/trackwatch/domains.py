"""URL decomposition and registrable-domain arithmetic.

Everything downstream (third-party classification, domain truncation,
tracker matching) is built on the two primitives here: splitting a URL
into its raw parts, and finding a hostname's registrable domain against
a public-suffix rule set.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field
from importlib import resources
from urllib.parse import urlsplit

from .errors import MalformedUrl, SuffixOnly

#: Version string of the suffix snapshot bundled with the package.
BUNDLED_SUFFIX_VERSION = "icann-pinned-2026.08"


@dataclass(frozen=True)
class ParsedUrl:
    """Raw decomposition of an absolute URL.

    No percent-decoding is applied anywhere: downstream hashing must see
    the exact bytes the browser would have sent. ``path`` keeps any
    ``;parameter`` portion so that scheme+hostname+path+query
    re-serializes to the normalized input; ``parameter_string`` is a
    convenience view of the part after the first ``;``.
    """

    scheme: str
    hostname: str
    path: str
    query: str = ""
    parameter_string: str = ""

    def reserialize(self) -> str:
        url = f"{self.scheme}://{self.hostname}{self.path}"
        if self.query:
            url += "?" + self.query
        return url


@dataclass(frozen=True)
class RegistrableDomain:
    """TLD+1 form of a hostname: public suffix plus one label."""

    value: str
    suffix_depth: int


class SuffixList:
    """Public-suffix rule set with wildcard and exception rules.

    Rules follow the public-suffix file grammar: one rule per line,
    ``*.`` prefix for wildcards, ``!`` prefix for exceptions. Lookup is
    the standard algorithm: exception rules beat wildcard rules, longer
    rules beat shorter ones, and a hostname whose TLD is unknown falls
    back to the implicit ``*`` rule (suffix = last label).
    """

    def __init__(self, rules=(), source_version: str = "unversioned"):
        self.source_version = source_version
        self._exact: set[tuple[str, ...]] = set()
        self._wildcard: set[tuple[str, ...]] = set()
        self._exception: set[tuple[str, ...]] = set()
        for rule in rules:
            self.add_rule(rule)

    def add_rule(self, rule: str) -> None:
        rule = rule.strip().lower()
        if not rule:
            return
        if rule.startswith("!"):
            self._exception.add(tuple(rule[1:].split(".")))
        elif rule.startswith("*."):
            self._wildcard.add(tuple(rule[2:].split(".")))
        else:
            self._exact.add(tuple(rule.split(".")))

    def __len__(self) -> int:
        return len(self._exact) + len(self._wildcard) + len(self._exception)

    def suffix_depth(self, hostname: str) -> int:
        """Number of labels in ``hostname``'s public suffix.

        Unknown TLDs fall back to depth 1 (the implicit ``*`` rule), so
        every multi-label hostname stays processable.
        """
        labels = hostname.lower().split(".")
        n = len(labels)
        best = 1
        for depth in range(1, n + 1):
            tail = tuple(labels[n - depth:])
            if tail in self._exception:
                # Exception rule: the suffix is the rule minus its first label.
                return depth - 1
            if tail in self._exact:
                best = max(best, depth)
            if depth >= 2 and tail[1:] in self._wildcard:
                best = max(best, depth)
        return best

    @classmethod
    def from_lines(cls, lines, source_version: str = "unversioned") -> "SuffixList":
        sl = cls(source_version=source_version)
        for raw in lines:
            line = raw.strip()
            if not line or line.startswith("//") or line.startswith("#"):
                continue
            sl.add_rule(line)
        return sl

    @classmethod
    def load(cls, path) -> "SuffixList":
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
        version = "unversioned"
        for line in lines:
            if line.startswith("// version:"):
                version = line.split(":", 1)[1].strip()
                break
        return cls.from_lines(lines, source_version=version)

    @classmethod
    def bundled(cls) -> "SuffixList":
        """The pinned ICANN-only snapshot shipped with the package."""
        text = resources.files("trackwatch.data").joinpath(
            "public_suffix_list.dat").read_text(encoding="utf-8")
        return cls.from_lines(text.splitlines(),
                              source_version=BUNDLED_SUFFIX_VERSION)


def parse_url(raw: str) -> ParsedUrl:
    """Split an absolute URL into scheme, hostname, path and query.

    The hostname is lowercased; nothing else is normalized or decoded.
    Raises MalformedUrl when the input has no scheme or no hostname.
    """
    try:
        parts = urlsplit(raw)
        hostname = parts.hostname
    except ValueError as exc:
        raise MalformedUrl(f"unparseable url: {raw!r}") from exc
    if not parts.scheme:
        raise MalformedUrl(f"missing scheme: {raw!r}")
    if not hostname:
        raise MalformedUrl(f"missing hostname: {raw!r}")
    scheme = parts.scheme.lower()
    if scheme not in ("http", "https"):
        scheme_kind = "other"
    else:
        scheme_kind = scheme
    path = parts.path or "/"
    if not path.startswith("/"):
        path = "/" + path
    parameter_string = path.split(";", 1)[1] if ";" in path else ""
    return ParsedUrl(
        scheme=scheme_kind,
        hostname=hostname,
        path=path,
        query=parts.query,
        parameter_string=parameter_string,
    )


def _is_ip_literal(hostname: str) -> bool:
    try:
        ipaddress.ip_address(hostname)
        return True
    except ValueError:
        return False


def registrable_domain(hostname: str, suffixes: SuffixList) -> RegistrableDomain:
    """TLD+1 form of ``hostname``: its public suffix plus one label.

    IP literals are their own registrable domain (no suffix semantics).
    Raises SuffixOnly when the hostname is itself a public suffix.
    """
    hostname = hostname.lower().rstrip(".")
    if _is_ip_literal(hostname):
        return RegistrableDomain(value=hostname, suffix_depth=0)
    labels = hostname.split(".")
    depth = suffixes.suffix_depth(hostname)
    if depth >= len(labels):
        raise SuffixOnly(f"{hostname!r} is a public suffix")
    return RegistrableDomain(
        value=".".join(labels[-(depth + 1):]),
        suffix_depth=depth,
    )


def truncate_tld2(hostname: str, suffixes: SuffixList) -> str:
    """Keep at most one label beyond the registrable domain (TLD+2).

    Hostnames already at or below TLD+2 depth are returned unchanged.
    """
    hostname = hostname.lower().rstrip(".")
    rd = registrable_domain(hostname, suffixes)
    if rd.suffix_depth == 0:
        return hostname
    labels = hostname.split(".")
    keep = rd.suffix_depth + 2
    if len(labels) <= keep:
        return hostname
    return ".".join(labels[-keep:])


def is_third_party(page_hostname: str, request_hostname: str,
                   suffixes: SuffixList) -> bool:
    """True iff the two hostnames have different registrable domains."""
    page_rd = registrable_domain(page_hostname, suffixes)
    req_rd = registrable_domain(request_hostname, suffixes)
    return page_rd.value != req_rd.value


def first_level_path(path: str) -> str:
    """Truncate a path to its first segment, slash-delimited.

    ``/`` stays ``/``; any other path becomes ``/{first-segment}/``,
    including single-segment paths (``/index.html`` -> ``/index.html/``).
    """
    if not path.startswith("/"):
        raise ValueError(f"path must start with '/': {path!r}")
    if path == "/":
        return "/"
    segment = path[1:].split("/", 1)[0]
    if not segment:
        return "/"
    return f"/{segment}/"
