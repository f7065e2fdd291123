"""Request/response models for the service endpoints."""

from __future__ import annotations

from typing import Literal, Optional, Union

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class TrackerSpecModel(BaseModel):
    tracker_id: str
    hostname: str
    category: str = "advertising"
    company_id: str = ""
    inclusion: Union[float, dict[str, float]] = 0.3
    include_with: str = ""
    content_types: dict[str, float] = Field(default_factory=lambda: {"script": 1.0})
    cookie_rate: float = 0.0
    identifier_rate: float = 0.0
    block_rate: float = 0.0
    external_block_rate: float = 0.0
    https_rate: Union[float, dict[str, float]] = 1.0
    server_countries: dict[str, float] = Field(default_factory=lambda: {"US": 1.0})
    path: str = "/collect"
    content_length_mu: float = 10.3
    content_length_sigma: float = 1.0


class CorpusSpecModel(BaseModel):
    sites: int = 20
    site_popularity: str = "uniform"
    zipf_exponent: float = 1.2
    users: int = 50
    user_countries: dict[str, float] = Field(default_factory=lambda: {"US": 1.0})
    pages: int = 1000
    months: list[str] = Field(default_factory=lambda: ["2018-04"])
    first_party_requests: int = 2
    site_https_rate: float = 1.0
    benign_query_rate: float = 0.3
    trackers: list[TrackerSpecModel] = Field(default_factory=list)


class GenerateRequest(BaseModel):
    spec: CorpusSpecModel
    seed: int = 0
    out_dir: str
    prefix: str = "corpus"


class GenerateResponse(BaseModel):
    events_path: str
    truth_path: str
    trackerdb_path: str
    pages: int
    events: int


class ConfigModel(BaseModel):
    suffix_list: Optional[str] = None
    tracker_db: Optional[str] = None
    cleaning_rules: Optional[str] = None
    geo_table: Optional[str] = None
    quorum_k: int = 5
    quorum_min_value_length: int = 2
    quorum_window_days: int = 7
    hash_truncation_bytes: int = 8
    proxies: int = 4
    delay_min_ms: int = 0
    delay_max_ms: int = 30_000
    seed: int = 0
    month: Optional[str] = None


class RunRequest(BaseModel):
    event_log: str
    out_dir: str
    config: ConfigModel = Field(default_factory=ConfigModel)


class MonthSummary(BaseModel):
    pages: int
    files: dict[str, str]


class RunResponse(BaseModel):
    out_dir: str
    months: list[str]
    reports: dict[str, MonthSummary]
    manifest_path: str
    sanitized_path: str
    events: int
    pages: int
    dropped_events: int


class InspectRequest(BaseModel):
    report: str
    kind: Literal["tracker", "site", "company"]
    entity_id: str


class InspectResponse(BaseModel):
    profile: dict


class TransportSimRequest(BaseModel):
    clients: int = 4
    messages_per_client: int = 25
    proxies: int = 4
    delay_min_ms: int = 0
    delay_max_ms: int = 30_000
    seed: int = 0


class TransportSimResponse(BaseModel):
    total_messages: int
    proxy_message_counts: list[int]
    max_proxy_share: float
    collector_entries: int
    collector_fields: list[str]
    proxy_log_fields: list[str]
    adjacent_inversion_rate: float


class DbCheckRequest(BaseModel):
    path: str


class DbCheckResponse(BaseModel):
    path: str
    version: str
    entries: int
    trackers: int
    companies: int


class QuorumExportRequest(BaseModel):
    event_log: str
    out_path: str
    k: int = 5
    min_value_length: int = 2
    window_days: int = 7


class QuorumExportResponse(BaseModel):
    out_path: str
    entries: int


class ErrorDetail(BaseModel):
    kind: str
    message: str
