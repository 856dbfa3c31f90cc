"""Command-line orchestration of the pipeline.

Exit codes are a stable contract: 0 success, 1 runtime failure, 2 usage or
configuration error. Commands own their output directory through a lockfile
and re-running a command with identical inputs and seed rewrites outputs
byte-identically.
"""

from __future__ import annotations

import csv
import json
import os
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import typer

from .aggregate import Schema, aggregate_stats, top_changes, window_packets
from .charts import emit_dow_chart, emit_map_csv
from .config import PipelineConfig, load_config
from .corpus import FrameStore, append_gap_log, ingest_directory, load_registry
from .detection import (
    MODES,
    count_by_class,
    filter_detections,
    import_detections,
    make_packet,
    read_packets,
    write_packets,
)
from .errors import CamlyticsError, ConfigError, EmptyHarmonizationError, PromptError, TransportError
from .llm import DeterministicMockClient, HttpTextGenClient
from .pipeline import NormalizeParams, normalize_camera
from .summarize import (
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
from .evalmetrics import evaluate_report, load_checklist
from .viewgraph import append_pairwise_log, cluster_assignments

app = typer.Typer(help="Traffic-camera analytics pipeline", add_completion=False)

EXIT_RUNTIME = 1
EXIT_USAGE = 2


@dataclass
class RunContext:
    config: PipelineConfig
    seed: int
    out: Path


@app.callback()
def main_options(
    ctx: typer.Context,
    config: Path | None = typer.Option(None, "--config", help="YAML configuration file"),
    seed: int = typer.Option(0, "--seed", help="Run seed for all randomized steps"),
    out: Path = typer.Option(Path("out"), "--out", help="Output directory"),
) -> None:
    try:
        cfg = load_config(config)
    except (ConfigError, FileNotFoundError, OSError) as exc:
        typer.echo(f"configuration error: {exc}", err=True)
        raise typer.Exit(EXIT_USAGE)
    ctx.obj = RunContext(config=cfg, seed=seed, out=out)


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except (ProcessLookupError, PermissionError, OverflowError):
        return False
    return True


@contextmanager
def output_lock(out: Path):
    """One command instance owns the output directory; stale locks are stolen."""
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".camlytics.lock"
    if lock.exists():
        try:
            holder = int(lock.read_text().strip() or "0")
        except ValueError:
            holder = 0
        if holder and holder != os.getpid() and _pid_alive(holder):
            typer.echo(f"output directory {out} is locked by pid {holder}", err=True)
            raise typer.Exit(EXIT_RUNTIME)
    lock.write_text(str(os.getpid()))
    try:
        yield
    finally:
        lock.unlink(missing_ok=True)


def _fail(message: str, code: int) -> None:
    typer.echo(f"error: {message}", err=True)
    raise typer.Exit(code)


def _load_registry_or_exit(ctx: RunContext):
    path = ctx.config.paths.registry
    if not Path(path).exists():
        _fail(f"registry file {path} not found", EXIT_USAGE)
    return load_registry(path)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.6f}"


@app.command()
def ingest(ctx: typer.Context, src: Path = typer.Argument(..., help="Snapshot directory")) -> None:
    """Ingest a snapshot directory into the grayscale frame store."""
    rc: RunContext = ctx.obj
    if not src.is_dir():
        _fail(f"source directory {src} does not exist", EXIT_USAGE)
    registry = _load_registry_or_exit(rc)
    store = FrameStore(rc.config.paths.frames_gray)
    with output_lock(rc.out):
        report = ingest_directory(
            src,
            registry,
            store,
            quarantine_dir=rc.config.paths.data_dir / "quarantine",
            interval_s=rc.config.sampling.interval_s,
            raw_dir=rc.config.paths.frames,
        )
        gap_log = rc.config.paths.gap_log
        gap_log.parent.mkdir(parents=True, exist_ok=True)
        gap_log.write_text("")
        append_gap_log(report.gaps, gap_log)
    typer.echo(
        f"stored={report.stored} skipped={report.skipped} quarantined={report.quarantined} gaps={len(report.gaps)}"
    )


@app.command()
def normalize(
    ctx: typer.Context,
    cam: list[str] = typer.Option(None, "--cam", help="Camera id (repeatable; default: all)"),
) -> None:
    """Cluster frames by viewpoint and write cluster/stability tables."""
    rc: RunContext = ctx.obj
    store = FrameStore(rc.config.paths.frames_gray)
    cam_ids = list(cam) if cam else store.cam_ids()
    if not cam_ids:
        _fail("no cameras found in the frame store", EXIT_USAGE)
    params = NormalizeParams(
        max_keypoints=rc.config.thresholds.max_keypoints,
        lowe_ratio=rc.config.thresholds.lowe_ratio,
        ransac_iterations=rc.config.thresholds.ransac_iterations,
        inlier_threshold_px=rc.config.thresholds.inlier_threshold_px,
        min_inlier_ratio=rc.config.thresholds.min_inlier_ratio,
        delta_deg=rc.config.thresholds.same_view_delta_deg,
        seed=rc.seed,
        cache_dir=rc.config.paths.keypoint_cache,
        all_pairs_limit=rc.config.thresholds.all_pairs_limit,
    )
    cluster_rows: list[list] = []
    stability_rows: list[list] = []
    with output_lock(rc.out):
        for cam_id in cam_ids:
            frames = store.frames_for(cam_id)
            if not frames:
                _fail(f"no frames stored for camera {cam_id}", EXIT_USAGE)
            result = normalize_camera(frames, params)
            for cam_id_, ts, vp_id, is_dom in cluster_assignments(result.clusters):
                cluster_rows.append([cam_id_, ts, vp_id, int(is_dom)])
            stability_rows.append(
                [cam_id, f"{result.stability:.6f}", result.num_clusters, len(frames)]
            )
            log_path = rc.out / "pairwise" / f"{cam_id}.jsonl"
            log_path.parent.mkdir(parents=True, exist_ok=True)
            log_path.write_text("")
            append_pairwise_log(result.pairwise, log_path)
            typer.echo(
                f"{cam_id}: frames={len(frames)} clusters={result.num_clusters} "
                f"stability={result.stability:.3f} mode={result.mode}"
            )
        _write_csv(rc.out / "clusters.csv", ["cam_id", "ts", "vp_id", "is_dominant"], cluster_rows)
        _write_csv(
            rc.out / "stability.csv",
            ["cam_id", "stability", "num_clusters", "frames_total"],
            stability_rows,
        )


def _load_dominance(clusters_csv: Path) -> dict[tuple[str, int], tuple[int, bool]]:
    table: dict[tuple[str, int], tuple[int, bool]] = {}
    with open(clusters_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            table[(row["cam_id"], int(row["ts"]))] = (
                int(row["vp_id"]),
                row["is_dominant"] == "1",
            )
    return table


@app.command("detect-import")
def detect_import(
    ctx: typer.Context,
    detections: Path = typer.Argument(..., help="Detection JSON-lines file"),
) -> None:
    """Filter imported detections, count per class, and append packets."""
    rc: RunContext = ctx.obj
    if not detections.is_file():
        _fail(f"detection file {detections} does not exist", EXIT_USAGE)
    with output_lock(rc.out):
        try:
            report = import_detections(detections)
        except OSError as exc:
            _fail(f"cannot read {detections}: {exc}", EXIT_RUNTIME)
        dominance = None
        clusters_csv = rc.out / "clusters.csv"
        if clusters_csv.exists():
            dominance = _load_dominance(clusters_csv)
        packets = []
        skipped_nondominant = 0
        for (cam_id, ts), dets in sorted(report.by_frame.items()):
            vp_id, is_dom = 0, True
            if dominance is not None and (cam_id, ts) in dominance:
                vp_id, is_dom = dominance[(cam_id, ts)]
            if not is_dom:
                skipped_nondominant += 1
                continue
            kept = filter_detections(dets, rc.config.thresholds.detection_score)
            packets.append(make_packet(cam_id, ts, count_by_class(kept), vp_id))
        store_path = rc.config.paths.packets
        existing = set()
        if store_path.exists():
            existing = {(p.cam_id, p.t) for p in read_packets(store_path)}
        fresh = [p for p in packets if (p.cam_id, p.t) not in existing]
        write_packets(fresh, store_path, append=store_path.exists())
    typer.echo(
        f"frames={len(report.by_frame)} packets_appended={len(fresh)} "
        f"skipped_nondominant={skipped_nondominant} malformed={report.malformed}"
    )


def _read_store_packets(rc: RunContext):
    path = rc.config.paths.packets
    if not Path(path).exists():
        _fail(f"packet store {path} not found", EXIT_RUNTIME)
    return read_packets(path)


@app.command()
def aggregate(
    ctx: typer.Context,
    window: str = typer.Option(..., "--window", help="Window label from the configuration"),
    schema: str = typer.Option("camera", "--schema", help="camera | zone | borough"),
    mode: str = typer.Option(..., "--mode", help="car | truck | ped | bike"),
) -> None:
    """Aggregate packet counts for one window into a stats CSV."""
    rc: RunContext = ctx.obj
    try:
        win = rc.config.window(window)
        schema_v = Schema(schema)
    except (ConfigError, ValueError) as exc:
        _fail(str(exc), EXIT_USAGE)
    packets = _read_store_packets(rc)
    registry = _load_registry_or_exit(rc) if schema_v is not Schema.CAMERA else None
    peak = (rc.config.sampling.peak_start_hour, rc.config.sampling.peak_end_hour)
    with output_lock(rc.out):
        try:
            bundles = aggregate_stats(
                window_packets(packets, win, peak, rc.config.sampling.tz_offset_s),
                schema_v,
                mode,
                registry,
            )
        except CamlyticsError as exc:
            _fail(str(exc), EXIT_RUNTIME)
        rows = [
            [b.partition, b.mode, b.total, _fmt(b.mean), _fmt(b.median), _fmt(b.std), b.sample_count]
            for b in bundles
        ]
        out_path = rc.out / f"stats_{window}_{schema}_{mode}.csv"
        _write_csv(out_path, ["partition", "mode", "total", "mean", "median", "std", "n"], rows)
    typer.echo(f"wrote {out_path} ({len(rows)} partitions)")


CHANGE_HEADER = ["partition", "mode", "pre", "post", "delta", "pct_delta"]


def _change_rows(records) -> list[list]:
    return [
        [r.partition, r.mode, _fmt(r.pre_value), _fmt(r.post_value), _fmt(r.delta), _fmt(r.pct_delta)]
        for r in records
    ]


@app.command()
def compare(
    ctx: typer.Context,
    pre: str = typer.Option(..., "--pre", help="Pre-window label"),
    post: str = typer.Option(..., "--post", help="Post-window label"),
    schema: str = typer.Option("camera", "--schema"),
    mode: str = typer.Option(..., "--mode"),
    k: int = typer.Option(3, "--k", help="Top-K list size"),
    basis: str = typer.Option("mean", "--basis", help="mean | total"),
) -> None:
    """Write change records plus top-K increase/decrease lists for two windows."""
    rc: RunContext = ctx.obj
    from .aggregate import compare_windows

    try:
        pre_w, post_w = rc.config.window(pre), rc.config.window(post)
    except ConfigError as exc:
        _fail(str(exc), EXIT_USAGE)
    packets = _read_store_packets(rc)
    registry = _load_registry_or_exit(rc) if Schema(schema) is not Schema.CAMERA else None
    peak = (rc.config.sampling.peak_start_hour, rc.config.sampling.peak_end_hour)
    with output_lock(rc.out):
        try:
            headline, sensitivity = compare_windows(
                packets, packets, pre_w, post_w, schema, mode, basis, registry,
                peak, rc.config.sampling.tz_offset_s,
            )
        except EmptyHarmonizationError as exc:
            _fail(str(exc), EXIT_RUNTIME)
        except CamlyticsError as exc:
            _fail(str(exc), EXIT_RUNTIME)
        stem = f"{pre}_vs_{post}_{schema}_{mode}"
        _write_csv(rc.out / f"changes_{stem}.csv", CHANGE_HEADER, _change_rows(headline))
        _write_csv(
            rc.out / f"changes_sensitivity_{stem}.csv", CHANGE_HEADER, _change_rows(sensitivity)
        )
        _write_csv(
            rc.out / f"top_increase_{stem}.csv",
            CHANGE_HEADER,
            _change_rows(top_changes(headline, k, "increase")),
        )
        _write_csv(
            rc.out / f"top_decrease_{stem}.csv",
            CHANGE_HEADER,
            _change_rows(top_changes(headline, k, "decrease")),
        )
    typer.echo(f"wrote {len(headline)} change records for {stem}")


def _text_client(rc: RunContext):
    if rc.config.endpoint.mock:
        return DeterministicMockClient()
    return HttpTextGenClient(rc.config.endpoint.url, rc.config.endpoint.token)


@app.command()
def report(
    ctx: typer.Context,
    pre: str = typer.Option(..., "--pre"),
    post: str = typer.Option(..., "--post"),
    stage: str = typer.Option("C", "--stage", help="Prompt stage A | B | C | D"),
    schema: str = typer.Option("zone", "--schema"),
    mode: str = typer.Option("car", "--mode"),
) -> None:
    """Generate, validate, and score one report; write text plus metrics sidecar."""
    rc: RunContext = ctx.obj
    if stage not in ("A", "B", "C", "D"):
        _fail(f"unknown stage {stage!r}", EXIT_USAGE)
    try:
        pre_w, post_w = rc.config.window(pre), rc.config.window(post)
    except ConfigError as exc:
        _fail(str(exc), EXIT_USAGE)
    exemplars = []
    if stage == "D":
        lib_path = rc.config.paths.exemplars
        if not Path(lib_path).exists():
            _fail(f"stage D requires the exemplar library at {lib_path}", EXIT_USAGE)
        exemplars = load_exemplar_library(lib_path)
    packets = _read_store_packets(rc)
    registry = _load_registry_or_exit(rc) if Schema(schema) is not Schema.CAMERA else None
    ep = rc.config.endpoint
    cfg = GenerationConfig(
        temperature=ep.temperature, top_p=ep.top_p, n_best=ep.n_best, max_retries=ep.max_retries
    )
    peak = (rc.config.sampling.peak_start_hour, rc.config.sampling.peak_end_hour)
    with output_lock(rc.out):
        try:
            stats = build_stats_payload(
                packets, packets, pre_w, post_w, schema, mode,
                k=rc.config.thresholds.top_k_exemplars, registry=registry,
                peak_hours=peak, tz_offset_s=rc.config.sampling.tz_offset_s,
            )
            prompt = build_prompt(stage, stats, exemplars, top_k=rc.config.thresholds.top_k_exemplars)
            context = build_eval_context(stats)
            client = _text_client(rc)
            candidates = generate_candidates(client, prompt, cfg, ep.sweep)
            scored = score_candidates(candidates, context)
            best, metrics = best_scored(scored)
            outcome = validate_and_reprompt(best, context, client, cfg, prompt)
        except TransportError as exc:
            _fail(f"endpoint failure: {exc}", EXIT_RUNTIME)
        except PromptError as exc:
            _fail(str(exc), EXIT_USAGE)
        except EmptyHarmonizationError as exc:
            _fail(str(exc), EXIT_RUNTIME)
        except CamlyticsError as exc:
            _fail(str(exc), EXIT_RUNTIME)
        reports = [m for _, m in scored]
        sidecar = {
            "stage": stage,
            "accepted": outcome.accepted,
            "retries": outcome.retries,
            "ncs": metrics.ncs,
            "precision": metrics.precision,
            "recall": metrics.recall,
            "cm_f1": metrics.cm_f1,
            "hr": metrics.hr,
            "score": metrics.score,
            "failures": outcome.failures,
            "sweep_mean": {
                "ncs": sum(r.ncs for r in reports) / len(reports),
                "cm_f1": sum(r.cm_f1 for r in reports) / len(reports),
                "hr": sum(r.hr for r in reports) / len(reports),
                "score": sum(r.score for r in reports) / len(reports),
            },
        }
        stem = f"report_{stage}_{schema}_{mode}"
        text = outcome.candidate.main_report
        if outcome.candidate.extended_report:
            text += "\n\n# Extended Report\n\n" + outcome.candidate.extended_report
        (rc.out / f"{stem}.txt").write_text(text + "\n")
        (rc.out / f"{stem}.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    status = "accepted" if outcome.accepted else "rejected"
    typer.echo(f"{status} after {outcome.retries} retries; score={metrics.score:.4f}")


@app.command("eval")
def eval_cmd(
    ctx: typer.Context,
    report_file: Path = typer.Argument(..., help="Report text file to score"),
    pre: str = typer.Option(..., "--pre"),
    post: str = typer.Option(..., "--post"),
    schema: str = typer.Option("zone", "--schema"),
    mode: str = typer.Option("car", "--mode"),
    checklist: Path | None = typer.Option(None, "--checklist", help="Checklist JSON-lines"),
) -> None:
    """Score an existing report against the packet-store statistics."""
    rc: RunContext = ctx.obj
    if not report_file.is_file():
        _fail(f"report file {report_file} does not exist", EXIT_USAGE)
    try:
        pre_w, post_w = rc.config.window(pre), rc.config.window(post)
    except ConfigError as exc:
        _fail(str(exc), EXIT_USAGE)
    packets = _read_store_packets(rc)
    registry = _load_registry_or_exit(rc) if Schema(schema) is not Schema.CAMERA else None
    checklist_items = load_checklist(checklist) if checklist else None
    with output_lock(rc.out):
        try:
            stats = build_stats_payload(
                packets, packets, pre_w, post_w, schema, mode, registry=registry,
            )
            context = build_eval_context(stats, checklist=checklist_items)
            result = evaluate_report(report_file.read_text(), context)
        except CamlyticsError as exc:
            _fail(str(exc), EXIT_RUNTIME)
        payload = result.to_json()
        (rc.out / "eval.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    typer.echo(json.dumps(payload, sort_keys=True))


@app.command()
def charts(
    ctx: typer.Context,
    pre: str = typer.Option(..., "--pre"),
    post: str = typer.Option(..., "--post"),
    mode: list[str] = typer.Option(None, "--mode", help="Mode (repeatable; default: all)"),
) -> None:
    """Emit day-of-week bar charts and the per-camera map CSV."""
    rc: RunContext = ctx.obj
    try:
        pre_w, post_w = rc.config.window(pre), rc.config.window(post)
    except ConfigError as exc:
        _fail(str(exc), EXIT_USAGE)
    modes = list(mode) if mode else list(MODES)
    packets = _read_store_packets(rc)
    if not packets:
        _fail("packet store is empty; nothing to chart", EXIT_RUNTIME)
    registry = _load_registry_or_exit(rc)
    with output_lock(rc.out):
        for m in modes:
            png, csv_path = emit_dow_chart(
                packets, packets, pre_w, post_w, m, rc.out, rc.config.sampling.tz_offset_s
            )
            map_csv = emit_map_csv(
                packets, packets, pre_w, post_w, m, registry, rc.out, rc.config.sampling.tz_offset_s
            )
            typer.echo(f"wrote {png} {csv_path} {map_csv}")


@app.command()
def serve(
    ctx: typer.Context,
    host: str = typer.Option("127.0.0.1", "--host"),
    port: int = typer.Option(8000, "--port"),
) -> None:
    """Run the HTTP service over the configured data directory."""
    import uvicorn

    from .service import AppState, create_app

    rc: RunContext = ctx.obj
    state = AppState.from_data_dir(rc.config.paths.data_dir)
    uvicorn.run(create_app(state), host=host, port=port)


def main() -> None:
    app()


if __name__ == "__main__":
    main()
