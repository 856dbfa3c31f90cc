import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from camlytics.errors import DegenerateGeometryError, InsufficientDataError
from camlytics.geometry import (
    Homography,
    derive_pair_seed,
    fit_homography_dlt,
    match_points,
    ransac_homography,
    same_view,
    symmetric_transfer_error,
    tilt_angle,
)

WELL_CONDITIONED_H = np.array(
    [[0.96, -0.12, 30.0], [0.10, 1.02, -12.0], [1e-4, -5e-5, 1.0]]
)


def project(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Forward-projection oracle independent of the Homography class."""
    ph = np.column_stack([pts, np.ones(len(pts))])
    q = ph @ h.T
    return q[:, :2] / q[:, 2:3]


def noisy_correspondences(seed: int, n_in=60, n_out=40, noise=0.5):
    """Labeled synthetic matches: noisy inliers of a known H plus outliers."""
    rng = np.random.default_rng(seed)
    src = rng.uniform([0, 0], [320, 240], (n_in + n_out, 2))
    dst = project(WELL_CONDITIONED_H, src)
    clean_dst = dst.copy()
    if n_in:
        dst[:n_in] += rng.normal(0, noise, (n_in, 2))
    if n_out:
        dst[n_in:] = rng.uniform([0, 0], [320, 240], (n_out, 2))
    return src, dst, clean_dst


class TestDLT:
    def test_identity(self):
        square = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
        h = fit_homography_dlt(square, square)
        assert np.allclose(h.h, np.eye(3), atol=1e-9)

    def test_pure_translation(self):
        square = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
        h = fit_homography_dlt(square, square + [5.0, 0.0])
        expected = np.array([[1, 0, 5], [0, 1, 0], [0, 0, 1]], dtype=float)
        assert np.allclose(h.h, expected, atol=1e-9)

    def test_eight_point_round_trip(self):
        rng = np.random.default_rng(0)
        src = rng.uniform([0, 0], [320, 240], (8, 2))
        dst = project(WELL_CONDITIONED_H, src)
        h = fit_homography_dlt(src, dst)
        assert np.abs(h.h - WELL_CONDITIONED_H).max() < 1e-6
        assert symmetric_transfer_error(h, src, dst).max() < 1e-6

    def test_collinear_points_rejected(self):
        src = np.array([[0, 0], [1, 1], [2, 2], [3, 3], [4, 4]], dtype=float)
        dst = src + 1.0
        with pytest.raises(DegenerateGeometryError):
            fit_homography_dlt(src, dst)

    def test_too_few_points(self):
        pts = np.array([[0, 0], [1, 0], [0, 1]], dtype=float)
        with pytest.raises(InsufficientDataError):
            fit_homography_dlt(pts, pts)


class TestHomographyType:
    def test_normalizes_last_element(self):
        h = Homography(2.0 * np.eye(3))
        assert h.h[2, 2] == 1.0

    def test_rank_deficient_rejected(self):
        bad = np.zeros((3, 3))
        bad[0, 0] = 1.0
        with pytest.raises(DegenerateGeometryError):
            Homography(bad)

    def test_apply_matches_oracle(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform([0, 0], [320, 240], (20, 2))
        h = Homography(WELL_CONDITIONED_H)
        assert np.allclose(h.apply(pts), project(WELL_CONDITIONED_H, pts), atol=1e-12)


class TestRansac:
    def test_exact_correspondences(self):
        rng = np.random.default_rng(2)
        src = rng.uniform([0, 0], [320, 240], (100, 2))
        dst = project(WELL_CONDITIONED_H, src)
        est = ransac_homography(src, dst, seed=0)
        assert est is not None
        assert est.inlier_ratio == 1.0
        assert np.abs(est.h.h - WELL_CONDITIONED_H).max() < 1e-6

    def test_noisy_inliers_with_outliers(self):
        src, dst, clean = noisy_correspondences(seed=100)
        est = ransac_homography(src, dst, seed=0)
        assert est is not None
        assert 0.55 <= est.inlier_ratio <= 0.65
        # model accuracy judged against the noise-free true inliers
        errors = symmetric_transfer_error(est.h, src[:60], clean[:60])
        assert errors.max() < 1.0

    def test_low_inlier_fraction_rejected(self):
        src, dst, _ = noisy_correspondences(seed=200, n_in=20, n_out=80, noise=0.0)
        assert ransac_homography(src, dst, seed=0) is None

    def test_too_few_matches(self):
        pts = np.zeros((3, 2))
        with pytest.raises(InsufficientDataError):
            ransac_homography(pts, pts)

    def test_determinism_under_fixed_seed(self):
        src, dst, _ = noisy_correspondences(seed=300)
        a = ransac_homography(src, dst, seed=17)
        b = ransac_homography(src, dst, seed=17)
        assert a is not None and b is not None
        assert np.array_equal(a.h.h, b.h.h)
        assert np.array_equal(a.inlier_indices, b.inlier_indices)

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_threshold_monotonicity(self, seed):
        src, dst, _ = noisy_correspondences(seed=400 + seed)
        counts = []
        for threshold in (1.0, 2.0, 4.0):
            est = ransac_homography(src, dst, inlier_threshold_px=threshold, seed=seed)
            counts.append(len(est.inlier_indices) if est is not None else 0)
        assert counts == sorted(counts)

    def test_iterations_used_recorded(self):
        src, dst, _ = noisy_correspondences(seed=500)
        est = ransac_homography(src, dst, iterations=250, seed=0)
        assert est is not None
        assert est.iterations_used == 250

    def test_parameter_validation(self):
        src, dst, _ = noisy_correspondences(seed=600)
        with pytest.raises(ValueError):
            ransac_homography(src, dst, iterations=0)
        with pytest.raises(ValueError):
            ransac_homography(src, dst, inlier_threshold_px=0.0)
        with pytest.raises(ValueError):
            ransac_homography(src, dst, min_inlier_ratio=1.5)


class TestTilt:
    def test_identity_is_zero(self):
        assert tilt_angle(Homography(np.eye(3))).theta_deg == 0.0

    def test_pure_zoom_is_zero(self):
        assert tilt_angle(Homography(np.diag([2.0, 2.0, 1.0]))).theta_deg == 0.0

    def test_five_degrees(self):
        c, s = np.cos(np.deg2rad(5)), np.sin(np.deg2rad(5))
        h = Homography(np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]]))
        assert tilt_angle(h).theta_deg == pytest.approx(5.0, abs=1e-12)

    def test_normalized_block_recorded(self):
        h = Homography(np.diag([3.0, 3.0, 1.0]))
        result = tilt_angle(h)
        assert np.allclose(result.r_norm, np.eye(2))

    def test_zero_first_column_rejected(self):
        # Invertible (a permutation), but the affine block's first column is zero.
        h = Homography(np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]))
        with pytest.raises(DegenerateGeometryError):
            tilt_angle(h)

    @given(
        st.floats(min_value=-179.9, max_value=180.0),
        st.floats(min_value=0.01, max_value=100.0),
    )
    @settings(max_examples=300, deadline=None)
    def test_scale_invariance(self, theta, scale):
        c, s = np.cos(np.deg2rad(theta)), np.sin(np.deg2rad(theta))
        base = np.array([[c, -s, 3.0], [s, c, -2.0], [0, 0, 1.0]])
        scaled = base.copy()
        scaled[:2, :2] *= scale
        t0 = tilt_angle(Homography(base)).theta_deg
        t1 = tilt_angle(Homography(scaled)).theta_deg
        assert t1 == pytest.approx(t0, abs=1e-9)

    def test_wraps_into_half_open_range(self):
        c, s = np.cos(np.pi), np.sin(np.pi)
        h = Homography(np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]]))
        theta = tilt_angle(h).theta_deg
        assert -180.0 < theta <= 180.0
        assert abs(theta) == pytest.approx(180.0, abs=1e-9)


class TestSameView:
    def test_zero_angle(self):
        assert same_view(0.0)

    def test_boundary_inclusive(self):
        assert same_view(10.0, 10.0)

    def test_just_outside(self):
        assert not same_view(10.1, 10.0)

    def test_negative_angles_use_magnitude(self):
        assert same_view(-9.9, 10.0)
        assert not same_view(-10.1, 10.0)

    def test_delta_must_be_positive(self):
        with pytest.raises(ValueError):
            same_view(0.0, 0.0)


class TestHelpers:
    def test_pair_seed_is_stable_and_distinct(self):
        a = derive_pair_seed(7, "CAM", 1, 2)
        assert a == derive_pair_seed(7, "CAM", 1, 2)
        assert a != derive_pair_seed(7, "CAM", 1, 3)
        assert a != derive_pair_seed(8, "CAM", 1, 2)
        assert 0 <= a < 2**64

    def test_match_points_empty(self):
        from camlytics.keypoint import MatchSet

        src, dst = match_points([], [], MatchSet(pairs=[]))
        assert src.shape == (0, 2) and dst.shape == (0, 2)
