import csv
import json
from datetime import date
from pathlib import Path

import pytest
from typer.testing import CliRunner

from camlytics.cli import app
from camlytics.corpus import CameraRecord, CameraRegistry, ZoneFlag, save_registry
from camlytics.detection import write_packets
from camlytics.synthgen import PacketScenario, SyntheticScene, Viewpoint, gen_packets, render_scene

runner = CliRunner()

CONFIG_TEMPLATE = """
paths:
  data_dir: {data_dir}
thresholds:
  max_keypoints: 600
  ransac_iterations: 300
windows:
  - label: "2024"
    start: 2024-02-05
    end: 2024-02-11
  - label: "2025"
    start: 2025-02-03
    end: 2025-02-09
  - label: "2025-empty"
    start: 2025-06-02
    end: 2025-06-08
"""


@pytest.fixture()
def workspace(tmp_path):
    data_dir = tmp_path / "data"
    data_dir.mkdir()
    registry = CameraRegistry()
    registry.register(CameraRecord("CAM01", 40.75, -73.99, "Manhattan", ZoneFlag.INSIDE))
    registry.register(CameraRecord("CAM02", 40.76, -73.98, "Manhattan", ZoneFlag.INSIDE))
    registry.register(CameraRecord("CAM03", 40.70, -73.95, "Brooklyn", ZoneFlag.OUTSIDE))
    save_registry(registry, data_dir / "registry.csv")

    pre = PacketScenario(
        cam_ids=("CAM01", "CAM02", "CAM03"),
        start_day=date(2024, 2, 5),
        days=7,
        rates={"car": 20, "truck": 10, "ped": 5, "bike": 2},
        distribution="constant",
    )
    post = PacketScenario(
        cam_ids=pre.cam_ids,
        start_day=date(2025, 2, 3),
        days=7,
        rates={m: r * 0.9 for m, r in pre.rates.items()},
        distribution="constant",
    )
    pre_p, _ = gen_packets(pre)
    post_p, _ = gen_packets(post)
    write_packets(pre_p + post_p, data_dir / "packets.csv")

    config = tmp_path / "config.yml"
    config.write_text(CONFIG_TEMPLATE.format(data_dir=data_dir))
    return tmp_path, config, data_dir


def invoke(config: Path, out: Path, *args: str):
    return runner.invoke(app, ["--config", str(config), "--out", str(out), *args])


class TestAggregateCommand:
    def test_writes_stats(self, workspace):
        tmp, config, _ = workspace
        result = invoke(config, tmp / "out", "aggregate", "--window", "2024", "--schema", "zone", "--mode", "truck")
        assert result.exit_code == 0, result.output
        rows = list(csv.DictReader(open(tmp / "out" / "stats_2024_zone_truck.csv")))
        by_zone = {r["partition"]: r for r in rows}
        assert by_zone["inside"]["total"] == "6720"
        assert by_zone["inside"]["mean"] == "10.000000"

    def test_unknown_window_is_usage_error(self, workspace):
        tmp, config, _ = workspace
        result = invoke(config, tmp / "out", "aggregate", "--window", "1999", "--mode", "car")
        assert result.exit_code == 2


class TestCompareCommand:
    def test_constant_shift(self, workspace):
        tmp, config, _ = workspace
        result = invoke(
            config, tmp / "out", "compare", "--pre", "2024", "--post", "2025",
            "--schema", "zone", "--mode", "truck", "--k", "2",
        )
        assert result.exit_code == 0, result.output
        rows = list(csv.DictReader(open(tmp / "out" / "changes_2024_vs_2025_zone_truck.csv")))
        assert all(abs(float(r["pct_delta"]) + 10.0) < 1e-9 for r in rows)
        sens = list(csv.DictReader(open(tmp / "out" / "changes_sensitivity_2024_vs_2025_zone_truck.csv")))
        assert len(sens) == len(rows)

    def test_pre_equals_post_is_all_zero(self, workspace):
        tmp, config, _ = workspace
        result = invoke(
            config, tmp / "out", "compare", "--pre", "2024", "--post", "2024", "--mode", "car"
        )
        assert result.exit_code == 0
        rows = list(csv.DictReader(open(tmp / "out" / "changes_2024_vs_2024_camera_car.csv")))
        assert all(float(r["pct_delta"]) == 0.0 for r in rows)

    def test_k_larger_than_partitions_lists_all(self, workspace):
        tmp, config, _ = workspace
        invoke(
            config, tmp / "out", "compare", "--pre", "2024", "--post", "2025",
            "--schema", "zone", "--mode", "car", "--k", "50",
        )
        rows = list(csv.DictReader(open(tmp / "out" / "top_increase_2024_vs_2025_zone_car.csv")))
        assert len(rows) == 2  # only two zones carry packets

    def test_empty_overlap_is_runtime_error(self, workspace):
        tmp, config, _ = workspace
        result = invoke(
            config, tmp / "out", "compare", "--pre", "2024", "--post", "2025-empty", "--mode", "car"
        )
        assert result.exit_code == 1

    def test_idempotent_outputs(self, workspace):
        tmp, config, _ = workspace
        args = ("compare", "--pre", "2024", "--post", "2025", "--schema", "zone", "--mode", "bike")
        invoke(config, tmp / "out", *args)
        path = tmp / "out" / "changes_2024_vs_2025_zone_bike.csv"
        first = path.read_bytes()
        invoke(config, tmp / "out", *args)
        assert path.read_bytes() == first


class TestReportCommand:
    def test_stage_b_mock_report(self, workspace):
        tmp, config, _ = workspace
        result = invoke(
            config, tmp / "out", "report", "--pre", "2024", "--post", "2025",
            "--stage", "B", "--schema", "zone", "--mode", "truck",
        )
        assert result.exit_code == 0, result.output
        text = (tmp / "out" / "report_B_zone_truck.txt").read_text()
        for header in ("Overview", "Description of Data", "Comparison of 2024 vs. 2025"):
            assert header in text
        sidecar = json.loads((tmp / "out" / "report_B_zone_truck.json").read_text())
        assert sidecar["accepted"] is True
        assert sidecar["retries"] == 0
        assert sidecar["ncs"] == 1.0
        assert "sweep_mean" in sidecar

    def test_stage_d_without_library_is_config_error(self, workspace):
        tmp, config, _ = workspace
        result = invoke(
            config, tmp / "out", "report", "--pre", "2024", "--post", "2025", "--stage", "D"
        )
        assert result.exit_code == 2

    def test_stage_d_with_library(self, workspace):
        tmp, config, data_dir = workspace
        lines = []
        for theme in ("mode_shifts", "zone_spillovers", "temporal_heterogeneity", "industry_impacts"):
            for j in range(2):
                lines.append(
                    json.dumps(
                        {"chunk_id": f"{theme}-{j}", "theme": theme, "text": f"brief {j} on {theme}"}
                    )
                )
        (data_dir / "exemplars.jsonl").write_text("\n".join(lines) + "\n")
        result = invoke(
            config, tmp / "out", "report", "--pre", "2024", "--post", "2025",
            "--stage", "D", "--schema", "zone", "--mode", "car",
        )
        assert result.exit_code == 0, result.output


class TestEvalCommand:
    def test_eval_mock_report(self, workspace):
        tmp, config, _ = workspace
        invoke(
            config, tmp / "out", "report", "--pre", "2024", "--post", "2025",
            "--stage", "C", "--schema", "zone", "--mode", "truck",
        )
        result = invoke(
            config, tmp / "out", "eval", str(tmp / "out" / "report_C_zone_truck.txt"),
            "--pre", "2024", "--post", "2025", "--schema", "zone", "--mode", "truck",
        )
        assert result.exit_code == 0, result.output
        payload = json.loads((tmp / "out" / "eval.json").read_text())
        assert payload["ncs"] == 1.0
        assert payload["hr"] == 0.0


class TestChartsCommand:
    def test_seven_paired_bars_and_map(self, workspace):
        tmp, config, _ = workspace
        result = invoke(config, tmp / "out", "charts", "--pre", "2024", "--post", "2025", "--mode", "truck")
        assert result.exit_code == 0, result.output
        rows = list(csv.DictReader(open(tmp / "out" / "dow_truck.csv")))
        assert len(rows) == 7
        assert all(r["2024"] and r["2025"] for r in rows)
        assert (tmp / "out" / "dow_truck.png").exists()
        map_rows = list(csv.DictReader(open(tmp / "out" / "map_truck.csv")))
        assert len(map_rows) == 3  # every camera carries packets

    def test_chart_values_equal_aggregate_values(self, workspace):
        # cross-file consistency: the per-dow means must reproduce the window mean
        tmp, config, _ = workspace
        invoke(config, tmp / "out", "charts", "--pre", "2024", "--post", "2025", "--mode", "car")
        invoke(config, tmp / "out", "aggregate", "--window", "2024", "--schema", "zone", "--mode", "car")
        dow_rows = list(csv.DictReader(open(tmp / "out" / "dow_car.csv")))
        values = {float(r["2024"]) for r in dow_rows}
        assert values == {20.0}  # constant-rate corpus: every dow equals the window mean
        stats_rows = list(csv.DictReader(open(tmp / "out" / "stats_2024_zone_car.csv")))
        assert {float(r["mean"]) for r in stats_rows} == {20.0}

    def test_missing_packets_is_runtime_error(self, tmp_path):
        data_dir = tmp_path / "data"
        data_dir.mkdir()
        config = tmp_path / "config.yml"
        config.write_text(CONFIG_TEMPLATE.format(data_dir=data_dir))
        result = invoke(config, tmp_path / "out", "charts", "--pre", "2024", "--post", "2025")
        assert result.exit_code == 1


class TestIngestNormalize:
    @pytest.fixture()
    def frame_corpus(self, tmp_path):
        import cv2

        scene = SyntheticScene(
            viewpoints=(Viewpoint(0.0), Viewpoint(20.0)),
            frames_per_viewpoint=(5, 3),
            seed=21,
            cam_id="CAM01",
        )
        frames, _ = render_scene(scene)
        src = tmp_path / "snaps"
        (src / "CAM01").mkdir(parents=True)
        for frame in frames:
            cv2.imwrite(str(src / "CAM01" / f"{frame.timestamp}.png"), frame.pixels)
        (src / "CAM01" / "9999999999.png").write_bytes(b"corrupt")
        return src

    def test_ingest_then_normalize(self, workspace, frame_corpus):
        tmp, config, data_dir = workspace
        result = invoke(config, tmp / "out", "ingest", str(frame_corpus))
        assert result.exit_code == 0, result.output
        assert "stored=8" in result.output
        assert "skipped=1" in result.output

        result = invoke(config, tmp / "out", "--seed", "3", "normalize", "--cam", "CAM01")
        assert result.exit_code == 0, result.output
        stability = list(csv.DictReader(open(tmp / "out" / "stability.csv")))
        assert stability[0]["cam_id"] == "CAM01"
        assert float(stability[0]["stability"]) == pytest.approx(5 / 8)
        assert stability[0]["num_clusters"] == "2"
        clusters = list(csv.DictReader(open(tmp / "out" / "clusters.csv")))
        assert len(clusters) == 8
        assert sum(1 for r in clusters if r["is_dominant"] == "1") == 5
        assert (tmp / "out" / "pairwise" / "CAM01.jsonl").exists()

    def test_unknown_camera_is_usage_error(self, workspace):
        tmp, config, _ = workspace
        result = invoke(config, tmp / "out", "normalize", "--cam", "NOPE")
        assert result.exit_code == 2

    def test_missing_source_dir(self, workspace):
        tmp, config, _ = workspace
        result = invoke(config, tmp / "out", "ingest", str(tmp / "missing"))
        assert result.exit_code == 2


class TestDetectImport:
    def test_import_appends_packets(self, workspace):
        tmp, config, data_dir = workspace
        lines = [
            json.dumps({"cam_id": "CAM01", "ts": 1900000000, "x": 1, "y": 1, "w": 4, "h": 4, "class": "car", "score": 0.9}),
            json.dumps({"cam_id": "CAM01", "ts": 1900000000, "x": 9, "y": 1, "w": 4, "h": 4, "class": "car", "score": 0.2}),
            json.dumps({"cam_id": "CAM01", "ts": 1900000000, "x": 5, "y": 5, "w": 4, "h": 4, "class": "plane", "score": 0.9}),
        ]
        dets = tmp / "dets.jsonl"
        dets.write_text("\n".join(lines) + "\n")
        result = invoke(config, tmp / "out", "detect-import", str(dets))
        assert result.exit_code == 0, result.output
        assert "malformed=1" in result.output
        from camlytics.detection import read_packets

        stored = [p for p in read_packets(data_dir / "packets.csv") if p.t == 1900000000]
        assert len(stored) == 1
        assert stored[0].n_car == 1  # 0.2-score detection filtered out

        # re-import is a no-op (idempotent append)
        result = invoke(config, tmp / "out", "detect-import", str(dets))
        assert "packets_appended=0" in result.output

    def test_non_dominant_frames_skipped(self, workspace):
        tmp, config, data_dir = workspace
        out = tmp / "out"
        out.mkdir()
        (out / "clusters.csv").write_text(
            "cam_id,ts,vp_id,is_dominant\n"
            "CAM01,1900000000,0,1\n"
            "CAM01,1900001800,1,0\n"
        )
        lines = [
            json.dumps({"cam_id": "CAM01", "ts": 1900000000, "x": 1, "y": 1, "w": 4, "h": 4, "class": "car", "score": 0.9}),
            json.dumps({"cam_id": "CAM01", "ts": 1900001800, "x": 1, "y": 1, "w": 4, "h": 4, "class": "car", "score": 0.9}),
        ]
        dets = tmp / "dets2.jsonl"
        dets.write_text("\n".join(lines) + "\n")
        result = invoke(config, out, "detect-import", str(dets))
        assert result.exit_code == 0, result.output
        assert "skipped_nondominant=1" in result.output
        from camlytics.detection import read_packets

        stored = {p.t for p in read_packets(data_dir / "packets.csv") if p.cam_id == "CAM01" and p.t >= 1900000000}
        assert stored == {1900000000}


class TestLockfile:
    def test_stale_lock_is_stolen(self, workspace):
        tmp, config, _ = workspace
        out = tmp / "out"
        out.mkdir()
        (out / ".camlytics.lock").write_text("999999999")
        result = invoke(config, out, "aggregate", "--window", "2024", "--mode", "car")
        assert result.exit_code == 0
        assert not (out / ".camlytics.lock").exists()
