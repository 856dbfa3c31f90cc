"""Homography fitting (normalized DLT), robust estimation under RANSAC, and
tilt-angle extraction from the scale-removed affine block.

All estimators are pure functions; RANSAC takes an explicit 64-bit seed so a
pipeline run is reproducible pair by pair.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometryError, InsufficientDataError
from .keypoint import Keypoint, MatchSet

RANSAC_ITERATIONS_DEFAULT = 1000
INLIER_THRESHOLD_PX_DEFAULT = 2.0
MIN_INLIER_RATIO_DEFAULT = 0.25
SAME_VIEW_DELTA_DEG_DEFAULT = 10.0


@dataclass(frozen=True)
class Homography:
    """3x3 projective map, scaled so h[2,2] = 1 (unit Frobenius norm fallback)."""

    h: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        m = np.asarray(self.h, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError("homography must be 3x3")
        if abs(m[2, 2]) > 1e-9:
            m = m / m[2, 2]
        else:
            m = m / np.linalg.norm(m)
        if abs(np.linalg.det(m)) < 1e-12:
            raise DegenerateGeometryError("homography is rank-deficient")
        object.__setattr__(self, "h", m)

    @property
    def affine_block(self) -> np.ndarray:
        return self.h[:2, :2]

    @property
    def translation(self) -> np.ndarray:
        return self.h[:2, 2]

    def apply(self, pts: np.ndarray) -> np.ndarray:
        """Map (N, 2) points through the homography."""
        pts = np.asarray(pts, dtype=np.float64)
        q = pts @ self.h[:2, :2].T + self.h[:2, 2]
        w = pts @ self.h[2, :2] + self.h[2, 2]
        return q / w[:, None]

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.h))


@dataclass
class HomographyEstimate:
    """Accepted RANSAC consensus: model, inlier bookkeeping, iteration count."""

    h: Homography
    inlier_indices: np.ndarray
    inlier_ratio: float
    iterations_used: int


@dataclass(frozen=True)
class TiltResult:
    """Relative tilt angle (deg, wrapped into (-180, 180]) and the normalized block."""

    theta_deg: float
    r_norm: np.ndarray = field(repr=False)


def _hartley_normalization(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Similarity T moving the centroid to the origin and mean distance to sqrt(2)."""
    centroid = pts.mean(axis=0)
    dist = np.sqrt(((pts - centroid) ** 2).sum(axis=1)).mean()
    scale = np.sqrt(2.0) / max(dist, 1e-12)
    t = np.array(
        [[scale, 0.0, -scale * centroid[0]], [0.0, scale, -scale * centroid[1]], [0.0, 0.0, 1.0]]
    )
    return (pts - centroid) * scale, t


def _design_matrix(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    n = len(src)
    x, y = src[:, 0], src[:, 1]
    u, v = dst[:, 0], dst[:, 1]
    a = np.zeros((2 * n, 9))
    a[0::2] = np.column_stack([x, y, np.ones(n), np.zeros((n, 3)), -u * x, -u * y, -u])
    a[1::2] = np.column_stack([np.zeros((n, 3)), x, y, np.ones(n), -v * x, -v * y, -v])
    return a


def fit_homography_dlt(src: np.ndarray, dst: np.ndarray) -> Homography:
    """Least-squares homography from >= 4 correspondences via normalized DLT.

    Raises DegenerateGeometryError when the configuration (collinear or
    coincident points) does not determine a unique map.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise ValueError("src and dst must both be (N, 2) arrays")
    if len(src) < 4:
        raise InsufficientDataError("homography needs at least 4 correspondences")
    src_n, t_src = _hartley_normalization(src)
    dst_n, t_dst = _hartley_normalization(dst)
    a = _design_matrix(src_n, dst_n)
    if a.shape[0] < 9:
        # Minimal 4-point system is 8x9: only the full SVD carries the
        # nullspace vector; uniqueness needs all 8 singular values nonzero.
        _, sv, vt = np.linalg.svd(a)
        rank_deficient = sv[0] < 1e-12 or sv[-1] / sv[0] < 1e-9
    else:
        _, sv, vt = np.linalg.svd(a, full_matrices=False)
        # A near-coincident second-smallest singular value means the nullspace
        # has dimension > 1 and the solution is not unique.
        rank_deficient = sv[0] < 1e-12 or sv[-2] / sv[0] < 1e-9
    if rank_deficient:
        raise DegenerateGeometryError("degenerate point configuration for DLT")
    h_norm = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ h_norm @ t_src
    return Homography(h)


def symmetric_transfer_error(h: Homography, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Per-correspondence sqrt(forward^2 + backward^2) transfer error in pixels."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    fwd = h.apply(src) - dst
    bwd = h.inverse().apply(dst) - src
    return np.sqrt((fwd**2).sum(axis=1) + (bwd**2).sum(axis=1))


def derive_pair_seed(base_seed: int, *parts: object) -> int:
    """Stable 64-bit seed for one frame pair, derived from ids and the run seed."""
    digest = hashlib.blake2b(
        ("|".join([str(base_seed), *map(str, parts)])).encode(), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


def _sample_quadruples(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    idx = rng.integers(0, n, size=(k, 4))
    while True:
        s = np.sort(idx, axis=1)
        bad = (s[:, 1:] == s[:, :-1]).any(axis=1)
        if not bad.any():
            return idx
        idx[bad] = rng.integers(0, n, size=(int(bad.sum()), 4))


def _noncollinear(pts: np.ndarray) -> np.ndarray:
    """(K, 4, 2) quadruples -> mask of samples where no 3 points are collinear."""
    combos = [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)]
    ok = np.ones(len(pts), dtype=bool)
    for i, j, k in combos:
        v1 = pts[:, j] - pts[:, i]
        v2 = pts[:, k] - pts[:, i]
        area = np.abs(v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0])
        ok &= area > 1e-9
    return ok


def _minimal_models(src_n: np.ndarray, dst_n: np.ndarray, samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched 4-point DLT in normalized space. Returns (models, valid mask)."""
    k = len(samples)
    s4 = src_n[samples]  # (K, 4, 2)
    d4 = dst_n[samples]
    valid = _noncollinear(s4) & _noncollinear(d4)
    x, y = s4[..., 0], s4[..., 1]
    u, v = d4[..., 0], d4[..., 1]
    zeros = np.zeros_like(x)
    ones = np.ones_like(x)
    rows_even = np.stack([x, y, ones, zeros, zeros, zeros, -u * x, -u * y, -u], axis=-1)
    rows_odd = np.stack([zeros, zeros, zeros, x, y, ones, -v * x, -v * y, -v], axis=-1)
    a = np.empty((k, 8, 9))
    a[:, 0::2] = rows_even
    a[:, 1::2] = rows_odd
    # full_matrices: the 9th right-singular vector (the nullspace) is the model.
    _, _, vt = np.linalg.svd(a)
    models = vt[:, -1, :].reshape(k, 3, 3)
    det = np.linalg.det(models)
    valid &= np.abs(det) > 1e-12
    return models, valid


def ransac_homography(
    src: np.ndarray,
    dst: np.ndarray,
    iterations: int = RANSAC_ITERATIONS_DEFAULT,
    inlier_threshold_px: float = INLIER_THRESHOLD_PX_DEFAULT,
    min_inlier_ratio: float = MIN_INLIER_RATIO_DEFAULT,
    seed: int = 0,
) -> HomographyEstimate | None:
    """Robust homography from noisy correspondences.

    Runs the full iteration budget (no early exit, keeping threshold
    monotonicity on a fixed seed), refits the best consensus set with the
    normalized DLT, and returns None when the final inlier ratio does not
    exceed min_inlier_ratio.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if len(src) < 4:
        raise InsufficientDataError("RANSAC needs at least 4 matches")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if inlier_threshold_px <= 0:
        raise ValueError("inlier_threshold_px must be positive")
    if not 0.0 < min_inlier_ratio < 1.0:
        raise ValueError("min_inlier_ratio must lie in (0, 1)")

    n = len(src)
    rng = np.random.default_rng(seed)
    samples = _sample_quadruples(rng, n, iterations)

    src_n, t_src = _hartley_normalization(src)
    dst_n, t_dst = _hartley_normalization(dst)
    models_n, valid = _minimal_models(src_n, dst_n, samples)
    if not valid.any():
        return None
    t_dst_inv = np.linalg.inv(t_dst)
    models = np.matmul(np.matmul(t_dst_inv, models_n[valid]), t_src)

    # Batched symmetric transfer error against every correspondence.
    src_h = np.column_stack([src, np.ones(n)])
    dst_h = np.column_stack([dst, np.ones(n)])
    fwd = np.matmul(models, src_h.T)  # (K, 3, N)
    bwd = np.matmul(np.linalg.inv(models), dst_h.T)
    with np.errstate(divide="ignore", invalid="ignore"):
        err2 = (
            (fwd[:, 0] / fwd[:, 2] - dst[:, 0]) ** 2
            + (fwd[:, 1] / fwd[:, 2] - dst[:, 1]) ** 2
            + (bwd[:, 0] / bwd[:, 2] - src[:, 0]) ** 2
            + (bwd[:, 1] / bwd[:, 2] - src[:, 1]) ** 2
        )
    err2 = np.where(np.isfinite(err2), err2, np.inf)
    inlier_mask = err2 <= inlier_threshold_px**2
    counts = inlier_mask.sum(axis=1)
    best_local = int(np.argmax(counts))
    best_count = int(counts[best_local])
    if best_count < 4:
        return None
    best_model = Homography(models[best_local])
    best_inliers = np.nonzero(inlier_mask[best_local])[0]

    # Iterated refit on the consensus set; keep the model explaining the most
    # points (ties go to the refit, which has lower residuals).
    inliers = best_inliers
    for _ in range(3):
        try:
            refit = fit_homography_dlt(src[inliers], dst[inliers])
        except (DegenerateGeometryError, InsufficientDataError):
            break
        refit_err = symmetric_transfer_error(refit, src, dst)
        refit_inliers = np.nonzero(refit_err <= inlier_threshold_px)[0]
        if len(refit_inliers) < len(best_inliers):
            break
        changed = len(refit_inliers) != len(inliers) or (refit_inliers != inliers).any()
        best_model, best_inliers = refit, refit_inliers
        inliers = refit_inliers
        if not changed:
            break

    ratio = len(best_inliers) / n
    if ratio <= min_inlier_ratio:
        return None
    return HomographyEstimate(
        h=best_model,
        inlier_indices=best_inliers,
        inlier_ratio=ratio,
        iterations_used=iterations,
    )


def tilt_angle(h: Homography) -> TiltResult:
    """Tilt angle: normalize the affine block by its first-column norm, then atan2."""
    r = h.affine_block
    norm = float(np.sqrt(r[0, 0] ** 2 + r[1, 0] ** 2))
    if norm <= 1e-12:
        raise DegenerateGeometryError("zero first column; tilt angle undefined")
    r_norm = r / norm
    theta = float(np.degrees(np.arctan2(r_norm[1, 0], r_norm[0, 0])))
    if theta <= -180.0:
        theta += 360.0
    return TiltResult(theta_deg=theta, r_norm=r_norm)


def same_view(theta_deg: float, delta_deg: float = SAME_VIEW_DELTA_DEG_DEFAULT) -> bool:
    """True iff |theta| <= delta (inclusive)."""
    if delta_deg <= 0:
        raise ValueError("delta_deg must be positive")
    return abs(theta_deg) <= delta_deg


def match_points(
    kps_a: list[Keypoint], kps_b: list[Keypoint], matches: MatchSet
) -> tuple[np.ndarray, np.ndarray]:
    """Matched keypoint coordinates as (src, dst) arrays for the estimators."""
    if not matches.pairs:
        return np.zeros((0, 2)), np.zeros((0, 2))
    src = np.array([[kps_a[i].x, kps_a[i].y] for i, _, _ in matches.pairs])
    dst = np.array([[kps_b[j].x, kps_b[j].y] for _, j, _ in matches.pairs])
    return src, dst
