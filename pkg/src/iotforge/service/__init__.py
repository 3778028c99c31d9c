"""HTTP + server-sent-events API over the pipeline and HIL sessions.

Endpoints:
    POST /jobs                  create a job, returns its id
    GET  /jobs                  list jobs
    GET  /jobs/{id}             snapshot (stage, outstanding probe, ...)
    GET  /jobs/{id}/events      SSE stream, resumable via ?after= or Last-Event-ID
    POST /jobs/{id}/hil         submit yes/no feedback for the outstanding probe
    GET  /jobs/{id}/artifact    the current artifact file map
"""

from __future__ import annotations

import json

from fastapi import FastAPI, Header, HTTPException, Query
from fastapi.responses import StreamingResponse

from ..errors import InvalidInputError
from .jobs import Job, JobManager, config_from_request
from .schemas import (
    ArtifactResponse,
    CreateJobRequest,
    EventRecord,
    HilAnswerRequest,
    HilAnswerResponse,
    JobCreated,
    JobListEntry,
    JobSnapshot,
    ProbeView,
)


def create_app(manager: JobManager | None = None) -> FastAPI:
    manager = manager or JobManager()
    app = FastAPI(title="iotforge service", version="0.1.0")
    app.state.manager = manager

    def require_job(job_id: str) -> Job:
        job = manager.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id}")
        return job

    @app.post("/jobs", response_model=JobCreated)
    def create_job(request: CreateJobRequest) -> JobCreated:
        try:
            config = config_from_request(request.model_dump())
            job = manager.create(config)
        except InvalidInputError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return JobCreated(job_id=job.job_id)

    @app.get("/jobs", response_model=list[JobListEntry])
    def list_jobs() -> list[JobListEntry]:
        return [JobListEntry(job_id=job.job_id, stage=job.stage) for job in manager.list()]

    @app.get("/jobs/{job_id}", response_model=JobSnapshot)
    def get_job(job_id: str) -> JobSnapshot:
        job = require_job(job_id)
        probe = job.feedback.outstanding
        no_counts, failed = _hil_state_from_events(job)
        return JobSnapshot(
            job_id=job.job_id,
            stage=job.stage,
            usable=job.result.usable if job.result else None,
            failure_reason=job.result.failure_reason if job.result else (job.error or ""),
            last_seq=job.events.last_seq,
            outstanding_probe=(
                ProbeView(function_id=probe.function_id, question=probe.question,
                          no_count=no_counts.get(probe.function_id, 0))
                if probe else None
            ),
            functions_failed=failed,
            no_counts=no_counts,
        )

    @app.get("/jobs/{job_id}/events")
    def stream_events(job_id: str,
                      after: int = Query(0, ge=0),
                      last_event_id: str | None = Header(None, alias="Last-Event-ID")):
        job = require_job(job_id)
        start = after
        if last_event_id:
            try:
                start = max(start, int(last_event_id))
            except ValueError:
                pass

        def generate():
            for record in job.events.iter_from(start):
                payload = json.dumps(record.data)
                yield f"id: {record.seq}\nevent: {record.event}\ndata: {payload}\n\n"

        return StreamingResponse(generate(), media_type="text/event-stream")

    @app.get("/jobs/{job_id}/events/history", response_model=list[EventRecord])
    def event_history(job_id: str, after: int = Query(0, ge=0)) -> list[EventRecord]:
        job = require_job(job_id)
        return [EventRecord(**record.to_dict()) for record in job.events.snapshot(after)]

    @app.post("/jobs/{job_id}/hil", response_model=HilAnswerResponse)
    def hil_answer(job_id: str, request: HilAnswerRequest) -> HilAnswerResponse:
        job = require_job(job_id)
        if not job.feedback.answer(request.answer):
            raise HTTPException(status_code=409, detail="no probe is awaiting feedback")
        return HilAnswerResponse(accepted=True)

    @app.get("/jobs/{job_id}/artifact", response_model=ArtifactResponse)
    def get_artifact(job_id: str) -> ArtifactResponse:
        job = require_job(job_id)
        artifact = job.result.artifact if job.result else None
        if artifact is None:
            raise HTTPException(status_code=404, detail="no artifact yet")
        return ArtifactResponse(
            artifact_id=artifact.artifact_id,
            revision=artifact.revision,
            manifest_path=artifact.manifest_path,
            files=dict(artifact.files),
        )

    return app


def _hil_state_from_events(job: Job) -> tuple[dict[str, int], list[str]]:
    """Derive live HIL counters from the event log (valid mid-run too)."""
    no_counts: dict[str, int] = {}
    failed: list[str] = []
    for record in job.events.snapshot():
        if record.event == "hil_no_counted":
            no_counts[record.data["function_id"]] = record.data["no_count"]
        elif record.event == "hil_function_failed":
            failed.append(record.data["function_id"])
    return no_counts, failed


app = create_app()
