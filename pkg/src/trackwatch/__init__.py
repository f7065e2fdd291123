"""trackwatch: measure third-party tracking from browser request-event logs.

The pipeline turns raw request events into per-page tracking records,
sanitizes them for privacy, ships them through a simulated unlinkable
proxy channel, attributes third-party domains to trackers and companies,
and aggregates the results into monthly reports.
"""

__version__ = "0.1.0"
