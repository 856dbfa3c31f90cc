"""FastAPI application wrapping the analytics core.

State lives in memory (optionally seeded from a data directory) so the
service can serve registries, packet stores, aggregation queries, report
generation, and evaluation to many clients. It also hosts the deterministic
mock completions endpoint that implements the text-generation wire contract.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..aggregate import AnalysisWindow, compare_windows, top_changes, window_packets, aggregate_stats
from ..corpus import CameraRecord, CameraRegistry, ZoneFlag, load_registry
from ..detection import DetectionPacket, read_packets
from ..errors import (
    AggregationError,
    CamlyticsError,
    DuplicateCameraError,
    EmptyHarmonizationError,
    MetricInputError,
    PromptError,
    TransportError,
)
from ..evalmetrics import EvalReport, Finding, NumericKind, evaluate_report
from ..llm import DeterministicMockClient
from ..summarize import (
    ExemplarChunk,
    GenerationConfig,
    best_scored,
    build_eval_context,
    build_prompt,
    build_stats_payload,
    generate_candidates,
    load_exemplar_library,
    score_candidates,
    validate_and_reprompt,
)
from . import schemas as S


class AppState:
    """In-memory service state: registry, packets, exemplars, generation client."""

    def __init__(
        self,
        registry: CameraRegistry | None = None,
        packets: list[DetectionPacket] | None = None,
        exemplars: list[ExemplarChunk] | None = None,
        text_client=None,
        gen_config: GenerationConfig | None = None,
        sweep: tuple[float, ...] = (0.2, 0.25, 0.3),
    ) -> None:
        self.registry = registry or CameraRegistry()
        self.packets = packets or []
        self.exemplars = exemplars or []
        self.text_client = text_client or DeterministicMockClient()
        self.gen_config = gen_config or GenerationConfig()
        self.sweep = sweep

    @classmethod
    def from_data_dir(cls, data_dir: str | Path) -> "AppState":
        data_dir = Path(data_dir)
        registry = None
        packets = None
        exemplars = None
        if (data_dir / "registry.csv").exists():
            registry = load_registry(data_dir / "registry.csv")
        if (data_dir / "packets.csv").exists():
            packets = read_packets(data_dir / "packets.csv")
        if (data_dir / "exemplars.jsonl").exists():
            exemplars = load_exemplar_library(data_dir / "exemplars.jsonl")
        return cls(registry=registry, packets=packets, exemplars=exemplars)


def _window(model: S.WindowModel) -> AnalysisWindow:
    return AnalysisWindow(
        label=model.label,
        start=model.start,
        end=model.end,
        day_filter=model.day_filter,
        period_filter=model.period_filter,
    )


def _change_model(r) -> S.ChangeModel:
    return S.ChangeModel(
        partition=r.partition,
        mode=r.mode,
        pre_value=r.pre_value,
        post_value=r.post_value,
        delta=r.delta,
        pct_delta=r.pct_delta,
    )


def _metrics_model(e: EvalReport) -> S.EvalMetricsModel:
    return S.EvalMetricsModel(**e.to_json())


def _mean_metrics(reports: list[EvalReport]) -> S.EvalMetricsModel:
    n = len(reports)
    return S.EvalMetricsModel(
        ncs=sum(r.ncs for r in reports) / n,
        precision=sum(r.precision for r in reports) / n,
        recall=sum(r.recall for r in reports) / n,
        cm_f1=sum(r.cm_f1 for r in reports) / n,
        hr=sum(r.hr for r in reports) / n,
        score=sum(r.score for r in reports) / n,
        item_count=reports[0].item_count,
        claim_count=round(sum(r.claim_count for r in reports) / n),
        zero_claims=all(r.zero_claims for r in reports),
    )


def create_app(state: AppState | None = None) -> FastAPI:
    state = state or AppState()
    app = FastAPI(title="camlytics", version=__version__)
    app.state.core = state

    @app.get("/health", response_model=S.HealthResponse)
    def health() -> S.HealthResponse:
        return S.HealthResponse(status="ok", version=__version__)

    @app.get("/cameras", response_model=S.CamerasResponse)
    def list_cameras() -> S.CamerasResponse:
        cams = [
            S.CameraModel(
                cam_id=r.cam_id,
                lat=r.latitude,
                lon=r.longitude,
                borough=r.borough,
                zone_flag=r.zone_flag.value,
                source=r.source,
            )
            for r in sorted(state.registry, key=lambda r: r.cam_id)
        ]
        return S.CamerasResponse(cameras=cams, count=len(cams))

    @app.post("/cameras", response_model=S.CamerasResponse, status_code=201)
    def register_camera(camera: S.CameraModel) -> S.CamerasResponse:
        record = CameraRecord(
            cam_id=camera.cam_id,
            latitude=camera.lat,
            longitude=camera.lon,
            borough=camera.borough,
            zone_flag=ZoneFlag(camera.zone_flag),
            source=camera.source,
        )
        try:
            state.registry.register(record)
        except DuplicateCameraError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        return list_cameras()

    @app.post("/packets", response_model=S.PacketsResponse)
    def add_packets(request: S.PacketsRequest) -> S.PacketsResponse:
        try:
            new = [
                DetectionPacket(
                    cam_id=p.cam_id,
                    t=p.ts,
                    n_car=p.n_car,
                    n_truck=p.n_truck,
                    n_ped=p.n_ped,
                    n_bike=p.n_bike,
                    vp_id=p.vp_id,
                )
                for p in request.packets
            ]
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        state.packets.extend(new)
        return S.PacketsResponse(stored=len(new), total=len(state.packets))

    @app.post("/aggregate", response_model=S.AggregateResponse)
    def aggregate(request: S.AggregateRequest) -> S.AggregateResponse:
        window = _window(request.window)
        packets = window_packets(state.packets, window)
        try:
            bundles = aggregate_stats(packets, request.schema_by, request.mode, state.registry)
        except AggregationError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return S.AggregateResponse(
            window=window.label,
            bundles=[
                S.StatBundleModel(
                    partition=b.partition,
                    mode=b.mode,
                    total=b.total,
                    mean=b.mean,
                    median=b.median,
                    std=b.std,
                    n=b.sample_count,
                )
                for b in bundles
            ],
        )

    @app.post("/compare", response_model=S.CompareResponse)
    def compare(request: S.CompareRequest) -> S.CompareResponse:
        try:
            headline, sensitivity = compare_windows(
                state.packets,
                state.packets,
                _window(request.pre),
                _window(request.post),
                request.schema_by,
                request.mode,
                request.basis,
                state.registry,
            )
        except (EmptyHarmonizationError, AggregationError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return S.CompareResponse(
            changes=[_change_model(r) for r in headline],
            sensitivity=[_change_model(r) for r in sensitivity],
            top_increases=[_change_model(r) for r in top_changes(headline, request.k, "increase")],
            top_decreases=[_change_model(r) for r in top_changes(headline, request.k, "decrease")],
        )

    @app.post("/report", response_model=S.ReportResponse)
    def report(request: S.ReportRequest) -> S.ReportResponse:
        try:
            stats = build_stats_payload(
                state.packets,
                state.packets,
                _window(request.pre),
                _window(request.post),
                request.schema_by,
                request.mode,
                k=request.top_k,
                registry=state.registry,
            )
            prompt = build_prompt(request.stage, stats, state.exemplars, top_k=request.top_k)
            context = build_eval_context(stats)
            candidates = generate_candidates(state.text_client, prompt, state.gen_config, state.sweep)
            scored = score_candidates(candidates, context)
            best, metrics = best_scored(scored)
            outcome = validate_and_reprompt(best, context, state.text_client, state.gen_config, prompt)
        except (EmptyHarmonizationError, AggregationError, PromptError, MetricInputError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        except TransportError as exc:
            raise HTTPException(status_code=502, detail=str(exc)) from exc
        return S.ReportResponse(
            stage=request.stage,
            accepted=outcome.accepted,
            retries=outcome.retries,
            main_report=outcome.candidate.main_report,
            extended_report=outcome.candidate.extended_report,
            metrics=_metrics_model(metrics),
            sweep_mean=_mean_metrics([m for _, m in scored]),
            failures=outcome.failures,
        )

    @app.post("/eval", response_model=S.EvalMetricsModel)
    def eval_report(request: S.EvalRequest) -> S.EvalMetricsModel:
        try:
            stats = build_stats_payload(
                state.packets,
                state.packets,
                _window(request.pre),
                _window(request.post),
                request.schema_by,
                request.mode,
                registry=state.registry,
            )
            checklist = None
            if request.checklist is not None:
                checklist = [
                    Finding(
                        text=item.text,
                        mode=item.mode,
                        location=item.location,
                        kind=NumericKind(item.kind) if item.kind else None,
                        value=item.value,
                        year=item.year,
                    )
                    for item in request.checklist
                ]
            context = build_eval_context(stats, checklist=checklist)
            result = evaluate_report(request.report_text, context)
        except (EmptyHarmonizationError, AggregationError, PromptError, MetricInputError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return _metrics_model(result)

    @app.post("/v1/completions", response_model=S.CompletionsResponse)
    def completions(request: S.CompletionsRequest) -> S.CompletionsResponse:
        mock = DeterministicMockClient()
        try:
            texts = mock.generate(request.prompt, request.temperature, request.top_p, request.n)
        except TransportError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return S.CompletionsResponse(completions=texts)

    @app.exception_handler(CamlyticsError)
    async def camlytics_error_handler(_, exc: CamlyticsError):
        raise HTTPException(status_code=500, detail=str(exc))

    return app
