"""Exception types shared across the pipeline stages."""


class TrackwatchError(Exception):
    """Base class for all pipeline errors."""


class MalformedUrl(TrackwatchError):
    """Input string is not an absolute URL with a hostname."""


class SuffixOnly(TrackwatchError):
    """Hostname is itself a public suffix; no registrable domain exists."""


class MalformedIp(TrackwatchError):
    """String is not a valid IPv4/IPv6 literal."""


class StageOrderViolation(TrackwatchError):
    """headers_received observed before before_request for a request id."""


class ParseError(TrackwatchError):
    """Input file or record failed to parse.

    Carries the 1-based line number when one is known.
    """

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class DuplicatePattern(TrackwatchError):
    """Tracker database contains the same domain pattern twice."""


class UnknownTracker(TrackwatchError):
    """Tracker id not present in the database."""


class EmptyCorpus(TrackwatchError):
    """Metric requested over an empty page-load corpus."""


class EmptySlice(TrackwatchError):
    """Metric requested over a slice that selects no page loads."""


class TrackerAbsent(TrackwatchError):
    """Metric requested for a tracker that appears on no page load."""


class UndefinedRatio(TrackwatchError):
    """Reach/site-reach ratio requested where site reach is zero."""


class SpecError(TrackwatchError):
    """Synthetic corpus specification is invalid."""


class ConfigError(TrackwatchError):
    """Pipeline configuration is invalid or references missing files."""


class UnknownEntity(TrackwatchError):
    """Inspect query for a tracker/site/company not present in a report."""
