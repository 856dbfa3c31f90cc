from datetime import date

import pytest
from fastapi.testclient import TestClient

from camlytics.corpus import CameraRecord, CameraRegistry, ZoneFlag
from camlytics.llm import FailingMockClient, HttpTextGenClient
from camlytics.service import AppState, create_app
from camlytics.synthgen import PacketScenario, gen_packets
from camlytics.errors import TransportError

WIN_2024 = {"label": "2024", "start": "2024-02-05", "end": "2024-02-11"}
WIN_2025 = {"label": "2025", "start": "2025-02-03", "end": "2025-02-09"}


@pytest.fixture()
def state():
    registry = CameraRegistry()
    registry.register(CameraRecord("CAM01", 40.75, -73.99, "Manhattan", ZoneFlag.INSIDE))
    registry.register(CameraRecord("CAM02", 40.70, -73.95, "Brooklyn", ZoneFlag.OUTSIDE))
    pre = PacketScenario(
        cam_ids=("CAM01", "CAM02"),
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
    return AppState(registry=registry, packets=pre_p + post_p)


@pytest.fixture()
def client(state):
    return TestClient(create_app(state))


class TestBasics:
    def test_health(self, client):
        payload = client.get("/health").json()
        assert payload["status"] == "ok"

    def test_state_from_data_dir(self, tmp_path, state):
        from camlytics.corpus import save_registry
        from camlytics.detection import write_packets

        save_registry(state.registry, tmp_path / "registry.csv")
        write_packets(state.packets[:10], tmp_path / "packets.csv")
        loaded = AppState.from_data_dir(tmp_path)
        assert len(loaded.registry) == len(state.registry)
        assert loaded.packets == state.packets[:10]

    def test_register_and_list_cameras(self, client):
        assert client.get("/cameras").json()["count"] == 2
        response = client.post(
            "/cameras",
            json={"cam_id": "CAM09", "lat": 40.0, "lon": -73.9, "borough": "Queens", "zone_flag": "boundary"},
        )
        assert response.status_code == 201
        assert response.json()["count"] == 3

    def test_duplicate_camera_conflict(self, client):
        body = {"cam_id": "CAM01", "lat": 40.0, "lon": -73.9, "borough": "M", "zone_flag": "inside"}
        assert client.post("/cameras", json=body).status_code == 409

    def test_bad_zone_flag_validation(self, client):
        body = {"cam_id": "X", "lat": 0, "lon": 0, "zone_flag": "sideways"}
        assert client.post("/cameras", json=body).status_code == 422

    def test_add_packets(self, client):
        body = {"packets": [{"cam_id": "CAM01", "ts": 1, "n_car": 3}]}
        response = client.post("/packets", json=body)
        assert response.status_code == 200
        assert response.json()["stored"] == 1


class TestAnalytics:
    def test_aggregate_zone(self, client):
        response = client.post(
            "/aggregate", json={"window": WIN_2024, "schema": "zone", "mode": "truck"}
        )
        assert response.status_code == 200
        bundles = {b["partition"]: b for b in response.json()["bundles"]}
        assert bundles["inside"]["mean"] == 10.0
        assert bundles["inside"]["total"] == 3360

    def test_compare(self, client):
        response = client.post(
            "/compare",
            json={"pre": WIN_2024, "post": WIN_2025, "schema": "zone", "mode": "truck", "k": 1},
        )
        assert response.status_code == 200
        payload = response.json()
        assert all(abs(c["pct_delta"] + 10.0) < 1e-9 for c in payload["changes"])
        assert len(payload["top_decreases"]) == 1

    def test_compare_empty_overlap(self, client):
        far = {"label": "off", "start": "2030-01-01", "end": "2030-01-07"}
        response = client.post(
            "/compare", json={"pre": WIN_2024, "post": far, "schema": "zone", "mode": "car"}
        )
        assert response.status_code == 422


class TestReportAndEval:
    def test_report_round_trip(self, client):
        response = client.post(
            "/report",
            json={"pre": WIN_2024, "post": WIN_2025, "stage": "B", "schema": "zone", "mode": "truck"},
        )
        assert response.status_code == 200
        payload = response.json()
        assert payload["accepted"] is True
        assert payload["retries"] == 0
        assert payload["metrics"]["ncs"] == 1.0
        for header in ("Overview", "Description of Data", "Comparison of 2024 vs. 2025"):
            assert header in payload["main_report"]
        assert payload["sweep_mean"]["ncs"] == 1.0

    def test_eval_endpoint(self, client):
        report = client.post(
            "/report",
            json={"pre": WIN_2024, "post": WIN_2025, "stage": "C", "schema": "zone", "mode": "car"},
        ).json()
        response = client.post(
            "/eval",
            json={
                "report_text": report["main_report"],
                "pre": WIN_2024,
                "post": WIN_2025,
                "schema": "zone",
                "mode": "car",
            },
        )
        assert response.status_code == 200
        assert response.json()["ncs"] == 1.0
        assert response.json()["hr"] == 0.0

    def test_eval_with_custom_checklist(self, client):
        checklist = [
            {"mode": "truck", "location": "inside", "kind": "pct_delta", "value": -10.0},
            {"mode": "truck", "location": "inside", "kind": "pct_delta", "value": 55.0},
        ]
        response = client.post(
            "/eval",
            json={
                "report_text": "In inside, trucks saw a change of -10.0%.",
                "pre": WIN_2024,
                "post": WIN_2025,
                "schema": "zone",
                "mode": "truck",
                "checklist": checklist,
            },
        )
        assert response.status_code == 200
        assert response.json()["recall"] == 0.5

    def test_transport_failure_maps_to_502(self, state):
        state.text_client = FailingMockClient()
        client = TestClient(create_app(state))
        response = client.post(
            "/report",
            json={"pre": WIN_2024, "post": WIN_2025, "stage": "A", "schema": "zone", "mode": "car"},
        )
        assert response.status_code == 502


class TestCompletionsEndpoint:
    def test_contract(self, client):
        from camlytics.aggregate import AnalysisWindow
        from camlytics.summarize import build_prompt, build_stats_payload

        state = client.app.state.core
        stats = build_stats_payload(
            state.packets,
            state.packets,
            AnalysisWindow("2024", date(2024, 2, 5), date(2024, 2, 11)),
            AnalysisWindow("2025", date(2025, 2, 3), date(2025, 2, 9)),
            "zone",
            "truck",
            registry=state.registry,
        )
        prompt = build_prompt("B", stats)
        response = client.post(
            "/v1/completions", json={"prompt": prompt, "temperature": 0.2, "top_p": 0.9, "n": 2}
        )
        assert response.status_code == 200
        completions = response.json()["completions"]
        assert len(completions) == 2
        assert "Overview" in completions[0]

    def test_http_client_against_service(self, client):
        from camlytics.aggregate import AnalysisWindow
        from camlytics.summarize import build_prompt, build_stats_payload

        state = client.app.state.core
        stats = build_stats_payload(
            state.packets,
            state.packets,
            AnalysisWindow("2024", date(2024, 2, 5), date(2024, 2, 11)),
            AnalysisWindow("2025", date(2025, 2, 3), date(2025, 2, 9)),
            "zone",
            "car",
            registry=state.registry,
        )
        prompt = build_prompt("C", stats)
        http_client = HttpTextGenClient("/v1/completions", client=client)
        texts = http_client.generate(prompt, temperature=0.25, top_p=0.9, n=3)
        assert len(texts) == 3

    def test_prompt_without_data_block_rejected(self, client):
        response = client.post("/v1/completions", json={"prompt": "hello", "n": 1})
        assert response.status_code == 422

    def test_http_client_error_paths(self, client):
        bad = HttpTextGenClient("/nonexistent", client=client)
        with pytest.raises(TransportError):
            bad.generate("x", 0.2, 0.9, 1)
