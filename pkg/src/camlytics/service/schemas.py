"""Pydantic request/response models for the service API."""

from __future__ import annotations

from datetime import date

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str = "ok"
    version: str


class CameraModel(BaseModel):
    cam_id: str = Field(..., min_length=1)
    lat: float
    lon: float
    borough: str = ""
    zone_flag: str = Field(..., pattern="^(inside|boundary|outside)$")
    source: str = ""


class CamerasResponse(BaseModel):
    cameras: list[CameraModel]
    count: int


class PacketModel(BaseModel):
    cam_id: str
    ts: int
    n_car: int = Field(0, ge=0)
    n_truck: int = Field(0, ge=0)
    n_ped: int = Field(0, ge=0)
    n_bike: int = Field(0, ge=0)
    vp_id: int = 0


class PacketsRequest(BaseModel):
    packets: list[PacketModel]


class PacketsResponse(BaseModel):
    stored: int
    total: int


class WindowModel(BaseModel):
    label: str
    start: date
    end: date
    day_filter: str = "all"
    period_filter: str = "all"


class AggregateRequest(BaseModel):
    window: WindowModel
    schema_by: str = Field("camera", alias="schema", pattern="^(camera|zone|borough)$")
    mode: str = Field(..., pattern="^(car|truck|ped|bike)$")

    model_config = {"populate_by_name": True}


class StatBundleModel(BaseModel):
    partition: str
    mode: str
    total: int
    mean: float
    median: float
    std: float
    n: int


class AggregateResponse(BaseModel):
    window: str
    bundles: list[StatBundleModel]


class CompareRequest(BaseModel):
    pre: WindowModel
    post: WindowModel
    schema_by: str = Field("camera", alias="schema", pattern="^(camera|zone|borough)$")
    mode: str = Field(..., pattern="^(car|truck|ped|bike)$")
    basis: str = Field("mean", pattern="^(mean|total)$")
    k: int = Field(3, ge=1)

    model_config = {"populate_by_name": True}


class ChangeModel(BaseModel):
    partition: str
    mode: str
    pre_value: float
    post_value: float
    delta: float
    pct_delta: float | None


class CompareResponse(BaseModel):
    changes: list[ChangeModel]
    sensitivity: list[ChangeModel]
    top_increases: list[ChangeModel]
    top_decreases: list[ChangeModel]


class ReportRequest(BaseModel):
    pre: WindowModel
    post: WindowModel
    stage: str = Field("C", pattern="^[ABCD]$")
    schema_by: str = Field("zone", alias="schema", pattern="^(camera|zone|borough)$")
    mode: str = Field("car", pattern="^(car|truck|ped|bike)$")
    top_k: int = Field(2, ge=1)

    model_config = {"populate_by_name": True}


class EvalMetricsModel(BaseModel):
    ncs: float
    precision: float
    recall: float
    cm_f1: float
    hr: float
    score: float
    item_count: int
    claim_count: int
    zero_claims: bool


class ReportResponse(BaseModel):
    stage: str
    accepted: bool
    retries: int
    main_report: str
    extended_report: str
    metrics: EvalMetricsModel
    sweep_mean: EvalMetricsModel
    failures: list[list[str]]


class ChecklistItemModel(BaseModel):
    text: str = ""
    mode: str | None = None
    location: str | None = None
    kind: str | None = None
    value: float | None = None
    year: str | None = None


class EvalRequest(BaseModel):
    report_text: str
    pre: WindowModel
    post: WindowModel
    schema_by: str = Field("zone", alias="schema", pattern="^(camera|zone|borough)$")
    mode: str = Field("car", pattern="^(car|truck|ped|bike)$")
    checklist: list[ChecklistItemModel] | None = None

    model_config = {"populate_by_name": True}


class CompletionsRequest(BaseModel):
    prompt: str
    temperature: float = Field(0.2, ge=0.0, le=2.0)
    top_p: float = Field(0.9, ge=0.0, le=1.0)
    n: int = Field(1, ge=1, le=8)


class CompletionsResponse(BaseModel):
    completions: list[str]
