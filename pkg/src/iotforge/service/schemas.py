"""Pydantic request/response models for the job service API."""

from __future__ import annotations

from typing import Any, Literal

from pydantic import BaseModel, Field


class CreateJobRequest(BaseModel):
    device_brand: str = Field(min_length=1)
    device_model: str = Field(min_length=1)
    platform_id: str = Field(min_length=1)
    serial_number: str | None = None
    device_key: str | None = None
    function_description: str | None = None
    seed: int = 0
    fixtures_dir: str | None = None
    config_path: str | None = None
    overrides: dict[str, Any] = Field(default_factory=dict)


class JobCreated(BaseModel):
    job_id: str


class ProbeView(BaseModel):
    function_id: str
    question: str
    no_count: int


class JobSnapshot(BaseModel):
    job_id: str
    stage: str
    usable: bool | None = None
    failure_reason: str = ""
    last_seq: int
    outstanding_probe: ProbeView | None = None
    functions_failed: list[str] = Field(default_factory=list)
    no_counts: dict[str, int] = Field(default_factory=dict)


class JobListEntry(BaseModel):
    job_id: str
    stage: str


class HilAnswerRequest(BaseModel):
    answer: Literal["yes", "no"]


class HilAnswerResponse(BaseModel):
    accepted: bool


class EventRecord(BaseModel):
    seq: int
    event: str
    data: dict[str, Any]


class ArtifactResponse(BaseModel):
    artifact_id: str
    revision: int
    manifest_path: str
    files: dict[str, str]


class ErrorResponse(BaseModel):
    detail: str
