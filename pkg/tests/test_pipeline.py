import numpy as np
import pytest

from camlytics.keypoint import detect_keypoints
from camlytics.pipeline import NormalizeParams, estimate_pair, normalize_camera
from camlytics.synthgen import SyntheticScene, Viewpoint, render_scene
from camlytics.viewgraph import frame_ref


@pytest.fixture(scope="module")
def two_view_frames():
    scene = SyntheticScene(
        viewpoints=(Viewpoint(0.0), Viewpoint(20.0)),
        frames_per_viewpoint=(4, 3),
        seed=13,
    )
    frames, labels = render_scene(scene)
    return frames, labels


PARAMS = NormalizeParams(max_keypoints=500, ransac_iterations=200, seed=5)


class TestEstimatePair:
    def test_same_view_pair_accepted(self, two_view_frames):
        frames, _ = two_view_frames
        a, b = frames[0], frames[1]
        ka, da = detect_keypoints(a, 500)
        kb, db = detect_keypoints(b, 500)
        result = estimate_pair(frame_ref(a), ka, da, frame_ref(b), kb, db, PARAMS)
        assert result.accepted
        assert result.inlier_ratio > 0.25
        assert abs(result.theta_deg) < 2.0

    def test_cross_view_pair_has_large_tilt(self, two_view_frames):
        frames, labels = two_view_frames
        a = frames[0]  # vp 0
        b = frames[4]  # vp 1 (20 degrees)
        ka, da = detect_keypoints(a, 500)
        kb, db = detect_keypoints(b, 500)
        result = estimate_pair(frame_ref(a), ka, da, frame_ref(b), kb, db, PARAMS)
        # planar scene: the homography fits, and the tilt reveals the rotation
        assert result.accepted
        assert result.theta_deg == pytest.approx(20.0, abs=2.0)

    def test_too_few_matches_rejected(self, two_view_frames):
        frames, _ = two_view_frames
        a = frames[0]
        ka, da = detect_keypoints(a, 500)
        result = estimate_pair(
            frame_ref(a), ka, da, frame_ref(frames[1]), [], np.zeros((0, 128)), PARAMS
        )
        assert not result.accepted
        assert result.theta_deg is None

    def test_deterministic_given_seed(self, two_view_frames):
        frames, _ = two_view_frames
        a, b = frames[0], frames[1]
        ka, da = detect_keypoints(a, 500)
        kb, db = detect_keypoints(b, 500)
        r1 = estimate_pair(frame_ref(a), ka, da, frame_ref(b), kb, db, PARAMS)
        r2 = estimate_pair(frame_ref(a), ka, da, frame_ref(b), kb, db, PARAMS)
        assert r1 == r2


class TestNormalizeCamera:
    def test_all_pairs_mode(self, two_view_frames):
        frames, labels = two_view_frames
        result = normalize_camera(frames, PARAMS)
        assert result.mode == "all_pairs"
        assert result.num_clusters == 2
        assert result.stability == pytest.approx(4 / 7)
        by_cluster = {c.cluster_id: {m.timestamp for m in c.members} for c in result.clusters}
        true_vp0 = {f.timestamp for f, lab in zip(frames, labels) if lab.vp_index == 0}
        assert true_vp0 in by_cluster.values()

    def test_streaming_mode_matches_all_pairs_clusters(self, two_view_frames):
        frames, _ = two_view_frames
        exact = normalize_camera(frames, PARAMS)
        from dataclasses import replace

        streaming = normalize_camera(frames, replace(PARAMS, all_pairs_limit=3))
        assert streaming.mode == "streaming"
        exact_sets = sorted(
            [sorted(m.timestamp for m in c.members) for c in exact.clusters]
        )
        streaming_sets = sorted(
            [sorted(m.timestamp for m in c.members) for c in streaming.clusters]
        )
        assert streaming_sets == exact_sets
        # streaming mode touches far fewer pairs than the quadratic sweep
        assert len(streaming.pairwise) < len(exact.pairwise)

    def test_single_frame_camera(self, two_view_frames):
        frames, _ = two_view_frames
        result = normalize_camera(frames[:1], PARAMS)
        assert result.num_clusters == 1
        assert result.stability == 1.0
        assert result.pairwise == []

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            normalize_camera([], PARAMS)

    def test_mixed_cameras_rejected(self, two_view_frames):
        frames, _ = two_view_frames
        from camlytics.corpus import Frame

        alien = Frame("OTHER", 1, np.zeros((8, 8), np.uint8))
        with pytest.raises(ValueError):
            normalize_camera([frames[0], alien], PARAMS)

    def test_keypoint_cache_reused(self, tmp_path, two_view_frames):
        frames, _ = two_view_frames
        from dataclasses import replace

        params = replace(PARAMS, cache_dir=tmp_path)
        normalize_camera(frames[:3], params)
        cache_files = list(tmp_path.rglob("*.bin"))
        assert len(cache_files) == 3
        stamps = {p: p.stat().st_mtime_ns for p in cache_files}
        normalize_camera(frames[:3], params)
        assert {p: p.stat().st_mtime_ns for p in cache_files} == stamps
