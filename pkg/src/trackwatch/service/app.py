"""FastAPI application exposing the pipeline.

Every operation the CLI offers goes through these endpoints; the CLI is
a thin client. Errors carry a machine-readable ``kind`` so clients can
distinguish configuration mistakes, unparseable input, and empty input.
"""

from __future__ import annotations

from dataclasses import fields as dataclass_fields
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import (ConfigError, DuplicatePattern, EmptyCorpus, EmptySlice,
                      MalformedIp, MalformedUrl, ParseError, SpecError,
                      StageOrderViolation, TrackwatchError, UnknownEntity,
                      UnknownTracker)
from ..generator import CorpusSpec, generate_corpus
from ..pipeline import (PipelineConfig, build_quorum_store, inspect_report,
                        run_pipeline)
from ..quorum import QuorumConfig
from ..sanitize import SanitizedPageLoad, hash_truncated
from ..trackerdb import load_db
from ..transport import (ClientChannel, CollectorLogEntry, ProxyLogEntry,
                         run_simulation)
from . import schemas

_ERROR_MAP = [
    ((ConfigError, SpecError), "config", 422),
    ((ParseError, StageOrderViolation, MalformedUrl, MalformedIp,
      DuplicatePattern), "parse", 400),
    ((EmptyCorpus, EmptySlice), "empty", 400),
    ((UnknownEntity, UnknownTracker), "unknown_entity", 404),
]


def classify_error(exc: TrackwatchError) -> tuple[str, int]:
    for types, kind, status in _ERROR_MAP:
        if isinstance(exc, types):
            return kind, status
    return "error", 400


def create_app() -> FastAPI:
    app = FastAPI(
        title="trackwatch",
        version=__version__,
        description="Third-party tracking measurement pipeline: corpus "
                    "generation, pipeline runs, transport simulation and "
                    "report inspection.",
    )

    @app.exception_handler(TrackwatchError)
    async def trackwatch_error_handler(request: Request, exc: TrackwatchError):
        kind, status = classify_error(exc)
        detail = schemas.ErrorDetail(kind=kind, message=str(exc))
        return JSONResponse(status_code=status,
                            content={"detail": detail.model_dump()})

    @app.get("/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/generate", response_model=schemas.GenerateResponse)
    def generate(req: schemas.GenerateRequest) -> schemas.GenerateResponse:
        spec = CorpusSpec.from_dict(req.spec.model_dump())
        result = generate_corpus(spec, req.seed, req.out_dir,
                                 prefix=req.prefix)
        return schemas.GenerateResponse(
            events_path=str(result.events_path),
            truth_path=str(result.truth_path),
            trackerdb_path=str(result.trackerdb_path),
            pages=result.pages,
            events=result.events,
        )

    @app.post("/run", response_model=schemas.RunResponse)
    def run(req: schemas.RunRequest) -> schemas.RunResponse:
        config = PipelineConfig.from_dict(req.config.model_dump())
        result = run_pipeline(config, req.event_log, req.out_dir)
        return schemas.RunResponse(
            out_dir=str(result.out_dir),
            months=result.months,
            reports={m: schemas.MonthSummary(
                pages=result.reports[m].corpus_size,
                files=result.report_paths[m]) for m in result.months},
            manifest_path=str(result.manifest_path),
            sanitized_path=str(result.sanitized_path),
            events=result.events,
            pages=result.pages,
            dropped_events=result.dropped_events,
        )

    @app.post("/inspect", response_model=schemas.InspectResponse)
    def inspect(req: schemas.InspectRequest) -> schemas.InspectResponse:
        profile = inspect_report(req.report, req.kind, req.entity_id)
        return schemas.InspectResponse(profile=profile)

    @app.post("/simulate-transport",
              response_model=schemas.TransportSimResponse)
    def simulate_transport(req: schemas.TransportSimRequest
                           ) -> schemas.TransportSimResponse:
        if req.clients < 1 or req.messages_per_client < 1:
            raise ConfigError("clients and messages_per_client must be >= 1")
        if req.proxies < 1:
            raise ConfigError("proxies must be >= 1")
        channels = [ClientChannel(f"c{i:03d}", delay_min=req.delay_min_ms,
                                  delay_max=req.delay_max_ms,
                                  rng_seed=req.seed * 10_007 + i)
                    for i in range(req.clients)]
        messages = []
        for j in range(req.messages_per_client):
            for i in range(req.clients):
                payload = SanitizedPageLoad(
                    protocol="https",
                    hostname_digest=hash_truncated(f"sim-site-{j}"),
                    path_digest=hash_truncated("/"),
                    started_at=j * 1000,
                )
                messages.append((i, payload, j * 1000))
        result = run_simulation(channels, req.proxies, messages,
                                seal_seed=req.seed)
        counts = [len(log) for log in result.proxy_logs]
        total = sum(counts)
        inversions = opportunities = 0
        for times in result.dispatch_times.values():
            for a, b in zip(times, times[1:]):
                opportunities += 1
                inversions += a > b
        return schemas.TransportSimResponse(
            total_messages=total,
            proxy_message_counts=counts,
            max_proxy_share=max(counts) / total if total else 0.0,
            collector_entries=len(result.collector_log),
            collector_fields=[f.name for f in
                              dataclass_fields(CollectorLogEntry)],
            proxy_log_fields=[f.name for f in dataclass_fields(ProxyLogEntry)],
            adjacent_inversion_rate=(inversions / opportunities
                                     if opportunities else 0.0),
        )

    @app.post("/db/check", response_model=schemas.DbCheckResponse)
    def db_check(req: schemas.DbCheckRequest) -> schemas.DbCheckResponse:
        if not Path(req.path).is_file():
            raise ConfigError(f"tracker db not found: {req.path}")
        db = load_db(req.path)
        return schemas.DbCheckResponse(
            path=req.path,
            version=db.version,
            entries=len(db),
            trackers=len(db.tracker_ids()),
            companies=len({e.company_id for e in db.entries}),
        )

    @app.post("/quorum/export", response_model=schemas.QuorumExportResponse)
    def quorum_export(req: schemas.QuorumExportRequest
                      ) -> schemas.QuorumExportResponse:
        try:
            config = QuorumConfig(k=req.k,
                                  min_value_length=req.min_value_length,
                                  window_days=req.window_days)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if not Path(req.event_log).is_file():
            raise ConfigError(f"event log not found: {req.event_log}")
        store = build_quorum_store(req.event_log, config)
        entries = store.export_csv(req.out_path)
        return schemas.QuorumExportResponse(out_path=req.out_path,
                                            entries=entries)

    return app


app = create_app()
