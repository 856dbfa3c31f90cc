"""Per-camera normalization driver: detect keypoints, estimate pairwise
homographies, cluster viewpoints, and score stability.

Two pairing strategies: exact all-pairs at desk scale (its cost is quadratic),
and a streaming mode that compares each frame against one exemplar per known
cluster (the earliest member), opening a new singleton cluster on no match.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Frame
from .errors import DegenerateGeometryError, InsufficientDataError
from .geometry import (
    INLIER_THRESHOLD_PX_DEFAULT,
    MIN_INLIER_RATIO_DEFAULT,
    RANSAC_ITERATIONS_DEFAULT,
    SAME_VIEW_DELTA_DEG_DEFAULT,
    derive_pair_seed,
    match_points,
    ransac_homography,
    tilt_angle,
)
from .keypoint import MAX_KEYPOINTS_DEFAULT, Keypoint, detect_cached, match_descriptors
from .viewgraph import (
    FrameRef,
    PairwiseResult,
    ViewCluster,
    build_view_graph,
    connected_components,
    frame_ref,
    stability_score,
)

ALL_PAIRS_LIMIT_DEFAULT = 500


@dataclass(frozen=True)
class NormalizeParams:
    max_keypoints: int = MAX_KEYPOINTS_DEFAULT
    lowe_ratio: float = 0.75
    ransac_iterations: int = RANSAC_ITERATIONS_DEFAULT
    inlier_threshold_px: float = INLIER_THRESHOLD_PX_DEFAULT
    min_inlier_ratio: float = MIN_INLIER_RATIO_DEFAULT
    delta_deg: float = SAME_VIEW_DELTA_DEG_DEFAULT
    seed: int = 0
    cache_dir: str | Path | None = None
    all_pairs_limit: int = ALL_PAIRS_LIMIT_DEFAULT


@dataclass
class NormalizeResult:
    cam_id: str
    clusters: list[ViewCluster]
    stability: float
    pairwise: list[PairwiseResult]
    mode: str  # "all_pairs" or "streaming"

    @property
    def num_clusters(self) -> int:
        return len(self.clusters)


def estimate_pair(
    ref_a: FrameRef,
    kps_a: list[Keypoint],
    desc_a: np.ndarray,
    ref_b: FrameRef,
    kps_b: list[Keypoint],
    desc_b: np.ndarray,
    params: NormalizeParams,
) -> PairwiseResult:
    """Match descriptors, run RANSAC, extract the tilt angle for one frame pair."""
    matches = match_descriptors(desc_a, desc_b, ratio=params.lowe_ratio)
    rejected = PairwiseResult(
        cam_id=ref_a.cam_id,
        ts_i=ref_a.timestamp,
        ts_j=ref_b.timestamp,
        accepted=False,
        inlier_ratio=0.0,
        theta_deg=None,
    )
    if len(matches) < 4:
        return rejected
    src, dst = match_points(kps_a, kps_b, matches)
    seed = derive_pair_seed(params.seed, ref_a.cam_id, ref_a.timestamp, ref_b.timestamp)
    try:
        est = ransac_homography(
            src,
            dst,
            iterations=params.ransac_iterations,
            inlier_threshold_px=params.inlier_threshold_px,
            min_inlier_ratio=params.min_inlier_ratio,
            seed=seed,
        )
    except InsufficientDataError:
        return rejected
    if est is None:
        return rejected
    try:
        tilt = tilt_angle(est.h)
    except DegenerateGeometryError:
        return rejected
    return PairwiseResult(
        cam_id=ref_a.cam_id,
        ts_i=ref_a.timestamp,
        ts_j=ref_b.timestamp,
        accepted=True,
        inlier_ratio=est.inlier_ratio,
        theta_deg=tilt.theta_deg,
    )


@dataclass
class _Detected:
    ref: FrameRef
    keypoints: list[Keypoint]
    descriptors: np.ndarray


def _detect_all(frames: list[Frame], params: NormalizeParams) -> list[_Detected]:
    out = []
    for f in frames:
        kps, desc = detect_cached(f, params.cache_dir, params.max_keypoints)
        out.append(_Detected(frame_ref(f), kps, desc))
    return out


def _normalize_all_pairs(detected: list[_Detected], params: NormalizeParams) -> tuple[list[ViewCluster], list[PairwiseResult]]:
    results: list[PairwiseResult] = []
    for i in range(len(detected)):
        for j in range(i + 1, len(detected)):
            a, b = detected[i], detected[j]
            results.append(
                estimate_pair(a.ref, a.keypoints, a.descriptors, b.ref, b.keypoints, b.descriptors, params)
            )
    graph = build_view_graph([d.ref for d in detected], results, delta_deg=params.delta_deg)
    return connected_components(graph), results


def _normalize_streaming(detected: list[_Detected], params: NormalizeParams) -> tuple[list[ViewCluster], list[PairwiseResult]]:
    from .geometry import same_view

    results: list[PairwiseResult] = []
    clusters: list[list[FrameRef]] = []
    exemplars: list[_Detected] = []
    for d in detected:
        placed = False
        for cluster, exemplar in zip(clusters, exemplars):
            r = estimate_pair(
                exemplar.ref,
                exemplar.keypoints,
                exemplar.descriptors,
                d.ref,
                d.keypoints,
                d.descriptors,
                params,
            )
            results.append(r)
            if r.accepted and r.theta_deg is not None and same_view(r.theta_deg, params.delta_deg):
                cluster.append(d.ref)
                placed = True
                break
        if not placed:
            clusters.append([d.ref])
            exemplars.append(d)
    view_clusters = [
        ViewCluster(cluster_id=i, members=sorted(members, key=lambda r: r.timestamp))
        for i, members in enumerate(clusters)
    ]
    return view_clusters, results


def normalize_camera(frames: list[Frame], params: NormalizeParams | None = None) -> NormalizeResult:
    """Cluster one camera's frames by viewpoint and score its stability."""
    if not frames:
        raise ValueError("normalize_camera needs at least one frame")
    params = params or NormalizeParams()
    cam_ids = {f.cam_id for f in frames}
    if len(cam_ids) != 1:
        raise ValueError(f"frames span multiple cameras: {sorted(cam_ids)}")
    frames = sorted(frames, key=lambda f: f.timestamp)
    detected = _detect_all(frames, params)
    if len(frames) <= params.all_pairs_limit:
        clusters, pairwise = _normalize_all_pairs(detected, params)
        mode = "all_pairs"
    else:
        clusters, pairwise = _normalize_streaming(detected, params)
        mode = "streaming"
    return NormalizeResult(
        cam_id=frames[0].cam_id,
        clusters=clusters,
        stability=stability_score(clusters, len(frames)),
        pairwise=pairwise,
        mode=mode,
    )
