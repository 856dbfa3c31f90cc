import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from camlytics.detection import (
    Detection,
    DetectionPacket,
    ObjectClass,
    RoiCalibration,
    count_by_class,
    density,
    filter_detections,
    import_detections,
    make_packet,
    read_packets,
    roi_for,
    sweep_score_threshold,
    write_packets,
)
from camlytics.errors import CalibrationError

MODES = ["car", "truck", "ped", "bike"]


def det(cls="car", score=0.5):
    return Detection(x=1.0, y=2.0, w=10.0, h=5.0, cls=ObjectClass(cls), score=score)


class TestFiltering:
    def test_threshold_is_inclusive(self):
        assert filter_detections([det(score=0.35)]) == [det(score=0.35)]

    def test_just_below_threshold_dropped(self):
        assert filter_detections([det(score=0.349)]) == []

    def test_empty_input(self):
        assert filter_detections([]) == []

    def test_order_preserved(self):
        dets = [det("car", 0.9), det("truck", 0.4), det("bike", 0.8)]
        assert filter_detections(dets, 0.5) == [dets[0], dets[2]]

    @given(st.lists(st.floats(min_value=0, max_value=1), max_size=40), st.floats(0, 1), st.floats(0, 1))
    @settings(max_examples=200, deadline=None)
    def test_filter_monotone_in_threshold(self, scores, t1, t2):
        lo, hi = min(t1, t2), max(t1, t2)
        dets = [det(score=s) for s in scores]
        counts_lo = count_by_class(filter_detections(dets, lo))
        counts_hi = count_by_class(filter_detections(dets, hi))
        assert all(counts_hi[m] <= counts_lo[m] for m in MODES)


class TestCounting:
    def test_basic_tally(self):
        counts = count_by_class([det("car"), det("car"), det("truck")])
        assert counts == {"car": 2, "truck": 1, "ped": 0, "bike": 0}

    def test_empty_all_zeros(self):
        assert count_by_class([]) == {m: 0 for m in MODES}

    def test_random_matches_brute_force(self):
        rng = np.random.default_rng(5)
        dets = [det(MODES[i]) for i in rng.integers(0, 4, size=50)]
        counts = count_by_class(dets)
        for mode in MODES:
            assert counts[mode] == sum(1 for d in dets if d.cls.value == mode)
        assert sum(counts.values()) == len(dets)


class TestDensity:
    def test_simple_ratio(self):
        assert density(12, RoiCalibration("C", 0, 100.0)) == pytest.approx(0.12)

    def test_zero_count(self):
        assert density(0, RoiCalibration("C", 0, 50.0)) == 0.0

    def test_zero_area_rejected(self):
        with pytest.raises(CalibrationError):
            RoiCalibration("C", 0, 0.0)

    def test_linear_in_count(self):
        roi = RoiCalibration("C", 0, 7.5)
        assert density(3, roi) + density(4, roi) == pytest.approx(density(7, roi))

    def test_default_roi_is_unit_area(self):
        assert roi_for({}, "C", 2).area_m2 == 1.0

    def test_roi_table_round_trip(self, tmp_path):
        from camlytics.detection import load_roi_table

        path = tmp_path / "roi.csv"
        path.write_text("cam_id,vp_id,area_m2\nC1,0,120.5\nC1,1,80.0\n")
        table = load_roi_table(path)
        assert table[("C1", 0)].area_m2 == 120.5
        assert roi_for(table, "C1", 1).area_m2 == 80.0
        assert roi_for(table, "C9", 0).area_m2 == 1.0


class TestPackets:
    def test_make_packet_fields(self):
        p = make_packet("C001", 1_700_000_000, {"car": 2, "truck": 1}, 3)
        assert (p.cam_id, p.t, p.n_car, p.n_truck, p.n_ped, p.n_bike, p.vp_id) == (
            "C001",
            1_700_000_000,
            2,
            1,
            0,
            0,
            3,
        )

    def test_negative_count_rejected(self):
        with pytest.raises(ValueError):
            DetectionPacket("C", 0, -1, 0, 0, 0, 0)

    def test_csv_round_trip_single(self, tmp_path):
        p = make_packet("C001", 42, {"car": 2, "truck": 1}, 3)
        path = tmp_path / "packets.csv"
        write_packets([p], path)
        assert read_packets(path) == [p]

    def test_csv_round_trip_random_thousand(self, tmp_path):
        rng = np.random.default_rng(7)
        packets = [
            DetectionPacket(
                cam_id=f"C{int(rng.integers(0, 20)):03d}",
                t=int(rng.integers(0, 10**9)),
                n_car=int(rng.integers(0, 100)),
                n_truck=int(rng.integers(0, 50)),
                n_ped=int(rng.integers(0, 80)),
                n_bike=int(rng.integers(0, 30)),
                vp_id=int(rng.integers(0, 4)),
            )
            for _ in range(1000)
        ]
        path = tmp_path / "packets.csv"
        write_packets(packets, path)
        assert read_packets(path) == packets

    def test_append_mode(self, tmp_path):
        path = tmp_path / "packets.csv"
        write_packets([make_packet("A", 1, {}, 0)], path)
        write_packets([make_packet("B", 2, {}, 0)], path, append=True)
        assert [p.cam_id for p in read_packets(path)] == ["A", "B"]


class TestImport:
    def _write_lines(self, path, lines):
        path.write_text("\n".join(json.dumps(line) if isinstance(line, dict) else line for line in lines) + "\n")

    def test_three_valid_lines(self, tmp_path):
        path = tmp_path / "dets.jsonl"
        self._write_lines(
            path,
            [
                {"cam_id": "C1", "ts": 10, "x": 0, "y": 0, "w": 5, "h": 5, "class": "car", "score": 0.9},
                {"cam_id": "C1", "ts": 10, "x": 5, "y": 0, "w": 5, "h": 5, "class": "truck", "score": 0.8},
                {"cam_id": "C2", "ts": 20, "x": 0, "y": 0, "w": 5, "h": 5, "class": "bike", "score": 0.7},
            ],
        )
        report = import_detections(path)
        assert report.total == 3
        assert len(report.by_frame[("C1", 10)]) == 2
        assert report.malformed == 0

    def test_unknown_class_skipped(self, tmp_path):
        path = tmp_path / "dets.jsonl"
        self._write_lines(
            path,
            [{"cam_id": "C1", "ts": 10, "x": 0, "y": 0, "w": 5, "h": 5, "class": "plane", "score": 0.9}],
        )
        report = import_detections(path)
        assert report.total == 0
        assert report.malformed == 1

    def test_bulk_import_matches_line_oracle(self, tmp_path):
        rng = np.random.default_rng(3)
        lines = []
        expected: dict[tuple[str, int], int] = {}
        for _ in range(10_000):
            cam = f"C{int(rng.integers(0, 10))}"
            ts = int(rng.integers(0, 100)) * 1800
            lines.append(
                {
                    "cam_id": cam,
                    "ts": ts,
                    "x": float(rng.uniform(0, 300)),
                    "y": float(rng.uniform(0, 200)),
                    "w": 5.0,
                    "h": 5.0,
                    "class": MODES[int(rng.integers(0, 4))],
                    "score": float(rng.uniform(0, 1)),
                }
            )
            expected[(cam, ts)] = expected.get((cam, ts), 0) + 1
        path = tmp_path / "dets.jsonl"
        self._write_lines(path, lines)
        report = import_detections(path)
        assert report.malformed == 0
        assert {k: len(v) for k, v in report.by_frame.items()} == expected

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(OSError):
            import_detections(tmp_path / "missing.jsonl")


class TestThresholdSweep:
    def test_picks_separating_threshold(self):
        # 10 true detections scored >= 0.6, 10 false scored <= 0.36: any cut in
        # (0.36, 0.6] is perfect, and the sweep must land there.
        scored = [(0.6 + 0.04 * i, True) for i in range(10)] + [
            (0.04 * i, False) for i in range(10)
        ]
        best_t, best_f = sweep_score_threshold(scored, n_ground_truth=10)
        assert 0.36 < best_t <= 0.60
        assert best_f == pytest.approx(1.0)

    def test_rejects_bad_ground_truth(self):
        with pytest.raises(ValueError):
            sweep_score_threshold([], 0)
