"""Deterministic synthetic data: warped textured scenes with known viewpoint
labels, and packet corpora with known aggregates.

Scenes are rendered from a continuous procedural texture (oriented sinusoids
plus Gaussian point features) evaluated analytically under each viewpoint's
similarity warp, so the true frame-to-frame homography is known exactly and
no resampling artifacts enter the geometry.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timezone
from pathlib import Path

import numpy as np

from .corpus import Frame
from .detection import MODES, DetectionPacket
from .errors import SceneSpecError


@dataclass(frozen=True)
class Viewpoint:
    """Rotation (deg) and isotropic scale about the image center, plus translation (px)."""

    rotation_deg: float = 0.0
    scale: float = 1.0
    tx: float = 0.0
    ty: float = 0.0


@dataclass(frozen=True)
class SyntheticScene:
    viewpoints: tuple[Viewpoint, ...]
    frames_per_viewpoint: tuple[int, ...]
    seed: int = 0
    width: int = 320
    height: int = 240
    noise_sigma: float = 1.5
    cam_id: str = "SYN"
    n_blobs: int = 650
    blob_sigma_range: tuple[float, float] = (2.0, 2.8)
    blob_amp_range: tuple[float, float] = (0.35, 0.55)
    start_ts: int = 1_700_000_000
    step_s: int = 1800

    def __post_init__(self) -> None:
        if len(self.viewpoints) != len(self.frames_per_viewpoint):
            raise SceneSpecError("viewpoints and frames_per_viewpoint lengths differ")
        if not self.viewpoints:
            raise SceneSpecError("at least one viewpoint required")
        for vp in self.viewpoints:
            if not 0.25 <= vp.scale <= 4.0:
                raise SceneSpecError(f"scale {vp.scale} outside renderable bounds [0.25, 4]")
            if abs(vp.tx) > self.width / 2 or abs(vp.ty) > self.height / 2:
                raise SceneSpecError("translation exceeds half the frame size")
        if any(n < 1 for n in self.frames_per_viewpoint):
            raise SceneSpecError("every viewpoint needs at least one frame")


@dataclass(frozen=True)
class FrameLabel:
    """Ground truth for one rendered frame: its viewpoint id and world->frame map."""

    vp_index: int
    homography: np.ndarray = field(repr=False)


def viewpoint_homography(vp: Viewpoint, width: int, height: int) -> np.ndarray:
    """World->frame similarity: rotate/scale about the image center, then translate."""
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    th = np.deg2rad(vp.rotation_deg)
    c, s = np.cos(th), np.sin(th)
    rs = vp.scale * np.array([[c, -s], [s, c]])
    h = np.eye(3)
    h[:2, :2] = rs
    h[:2, 2] = np.array([cx + vp.tx, cy + vp.ty]) - rs @ np.array([cx, cy])
    return h


def true_pairwise_tilt(vp_a: Viewpoint, vp_b: Viewpoint) -> float:
    """Relative tilt (deg) of frame b against frame a, wrapped into (-180, 180]."""
    d = vp_b.rotation_deg - vp_a.rotation_deg
    d = (d + 180.0) % 360.0 - 180.0
    return 180.0 if d == -180.0 else d


@dataclass
class _Texture:
    sin_freq: np.ndarray  # (K, 2) cycles/px
    sin_phase: np.ndarray  # (K,)
    sin_amp: np.ndarray  # (K,)
    blob_xy: np.ndarray  # (M, 2) world px
    blob_sigma: np.ndarray  # (M,)
    blob_amp: np.ndarray  # (M,)


def _make_texture(scene: SyntheticScene) -> _Texture:
    rng = np.random.default_rng(scene.seed)
    k = 6
    angles = rng.uniform(0, np.pi, size=k)
    freqs = rng.uniform(0.012, 0.05, size=k)
    sin_freq = np.stack([freqs * np.cos(angles), freqs * np.sin(angles)], axis=1)
    sin_phase = rng.uniform(0, 2 * np.pi, size=k)
    sin_amp = rng.uniform(0.01, 0.022, size=k)
    # Point features on a jittered grid: separated centers keep blobs from
    # cancelling each other, so each one yields a clean scale-space extremum.
    m = scene.n_blobs
    span_x, span_y = 0.9 * scene.width, 0.9 * scene.height
    gx = max(int(round(np.sqrt(m * span_x / span_y))), 1)
    gy = max(int(np.ceil(m / gx)), 1)
    cell_x, cell_y = span_x / gx, span_y / gy
    cols_idx = np.arange(gx * gy) % gx
    rows_idx = np.arange(gx * gy) // gx
    centers_x = 0.05 * scene.width + (cols_idx + 0.5) * cell_x
    centers_y = 0.05 * scene.height + (rows_idx + 0.5) * cell_y
    order = rng.permutation(gx * gy)[:m]
    jitter = rng.uniform(-0.15, 0.15, size=(m, 2)) * np.array([cell_x, cell_y])
    blob_xy = np.stack([centers_x[order], centers_y[order]], axis=1) + jitter
    lo_s, hi_s = scene.blob_sigma_range
    lo_a, hi_a = scene.blob_amp_range
    blob_sigma = rng.uniform(lo_s, hi_s, size=m)
    blob_amp = rng.uniform(lo_a, hi_a, size=m) * rng.choice([-1.0, 1.0], size=m)
    return _Texture(sin_freq, sin_phase, sin_amp, blob_xy, blob_sigma, blob_amp)


def _render_viewpoint(scene: SyntheticScene, tex: _Texture, vp: Viewpoint) -> np.ndarray:
    """Noise-free float image in [0, 1] for one viewpoint."""
    w, h = scene.width, scene.height
    hom = viewpoint_homography(vp, w, h)
    inv = np.linalg.inv(hom)
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    wx = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    wy = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
    img = np.full((h, w), 0.5)
    for (fx, fy), ph, amp in zip(tex.sin_freq, tex.sin_phase, tex.sin_amp):
        img += amp * np.sin(2 * np.pi * (fx * wx + fy * wy) + ph)
    # Similarity warp keeps Gaussian blobs isotropic: center maps through H,
    # sigma scales by vp.scale, so blobs paint exactly in frame space.
    centers = (hom[:2, :2] @ tex.blob_xy.T).T + hom[:2, 2]
    sigmas = tex.blob_sigma * vp.scale
    for (bx, by), sg, amp in zip(centers, sigmas, tex.blob_amp):
        r = 4.0 * sg
        x0, x1 = max(0, int(bx - r)), min(w, int(bx + r) + 1)
        y0, y1 = max(0, int(by - r)), min(h, int(by + r) + 1)
        if x0 >= x1 or y0 >= y1:
            continue
        gx = np.arange(x0, x1, dtype=np.float64) - bx
        gy = np.arange(y0, y1, dtype=np.float64) - by
        img[y0:y1, x0:x1] += amp * np.exp(
            -(gy[:, None] ** 2 + gx[None, :] ** 2) / (2 * sg * sg)
        )
    return img


def render_scene(scene: SyntheticScene) -> tuple[list[Frame], list[FrameLabel]]:
    """Render every frame of the scene with its ground-truth label.

    Frames of one viewpoint share geometry and differ only by seeded pixel
    noise. Same seed, same bytes.
    """
    tex = _make_texture(scene)
    frames: list[Frame] = []
    labels: list[FrameLabel] = []
    index = 0
    for vp_index, (vp, count) in enumerate(zip(scene.viewpoints, scene.frames_per_viewpoint)):
        base = _render_viewpoint(scene, tex, vp)
        hom = viewpoint_homography(vp, scene.width, scene.height)
        for _ in range(count):
            noise_rng = np.random.default_rng([scene.seed, index])
            img = base * 255.0
            if scene.noise_sigma > 0:
                img = img + noise_rng.normal(0.0, scene.noise_sigma, size=base.shape)
            pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)
            frames.append(
                Frame(scene.cam_id, scene.start_ts + index * scene.step_s, pixels)
            )
            labels.append(FrameLabel(vp_index=vp_index, homography=hom.copy()))
            index += 1
    return frames, labels


def scene_to_json(scene: SyntheticScene, path: str | Path) -> None:
    payload = {
        "viewpoints": [
            {"rotation_deg": v.rotation_deg, "scale": v.scale, "tx": v.tx, "ty": v.ty}
            for v in scene.viewpoints
        ],
        "frames_per_viewpoint": list(scene.frames_per_viewpoint),
        "seed": scene.seed,
        "width": scene.width,
        "height": scene.height,
        "noise_sigma": scene.noise_sigma,
        "cam_id": scene.cam_id,
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def scene_from_json(path: str | Path) -> SyntheticScene:
    payload = json.loads(Path(path).read_text())
    return SyntheticScene(
        viewpoints=tuple(Viewpoint(**v) for v in payload["viewpoints"]),
        frames_per_viewpoint=tuple(payload["frames_per_viewpoint"]),
        seed=payload.get("seed", 0),
        width=payload.get("width", 320),
        height=payload.get("height", 240),
        noise_sigma=payload.get("noise_sigma", 1.5),
        cam_id=payload.get("cam_id", "SYN"),
    )


@dataclass(frozen=True)
class PacketScenario:
    """Density scenario: cameras x days x per-day packets with per-mode rates."""

    cam_ids: tuple[str, ...]
    start_day: date
    days: int
    rates: dict[str, float]  # expected objects/frame per mode
    per_day: int = 48
    distribution: str = "poisson"  # or "constant"
    seed: int = 0
    vp_id: int = 0

    def shifted(self, shift: float) -> "PacketScenario":
        """Scenario with every rate scaled by (1 + shift) — the injected change."""
        return replace(self, rates={m: r * (1.0 + shift) for m, r in self.rates.items()})


@dataclass(frozen=True)
class TrueStats:
    """Generator-side tally for one (cam_id, mode): the aggregate oracle."""

    total: int
    mean: float
    median: float
    std: float
    n: int


def _stats_from_counts(counts: list[int]) -> TrueStats:
    n = len(counts)
    total = sum(counts)
    mean = total / n
    ordered = sorted(counts)
    mid = n // 2
    median = float(ordered[mid]) if n % 2 else (ordered[mid - 1] + ordered[mid]) / 2.0
    if n < 2:
        std = 0.0
    else:
        sq = sum(c * c for c in counts)
        var = (sq - total * total / n) / (n - 1)
        std = float(np.sqrt(var)) if var > 0 else 0.0
    return TrueStats(total=total, mean=mean, median=median, std=std, n=n)


def gen_packets(
    scenario: PacketScenario,
) -> tuple[list[DetectionPacket], dict[tuple[str, str], TrueStats]]:
    """Generate packets plus the per-(camera, mode) ground-truth aggregates."""
    if scenario.distribution not in ("poisson", "constant"):
        raise ValueError("distribution must be 'poisson' or 'constant'")
    if scenario.days < 1 or scenario.per_day < 1:
        raise ValueError("days and per_day must be positive")
    step = 86400 // scenario.per_day
    packets: list[DetectionPacket] = []
    tallies: dict[tuple[str, str], list[int]] = {
        (cam, mode): [] for cam in scenario.cam_ids for mode in MODES
    }
    for ci, cam in enumerate(scenario.cam_ids):
        rng = np.random.default_rng([scenario.seed, ci])
        for day in range(scenario.days):
            day_start = int(
                datetime.combine(scenario.start_day, datetime.min.time(), tzinfo=timezone.utc).timestamp()
            ) + day * 86400
            for k in range(scenario.per_day):
                counts: dict[str, int] = {}
                for mode in MODES:
                    rate = scenario.rates.get(mode, 0.0)
                    if scenario.distribution == "constant":
                        c = int(round(rate))
                    else:
                        c = int(rng.poisson(rate))
                    counts[mode] = c
                    tallies[(cam, mode)].append(c)
                packets.append(
                    DetectionPacket(
                        cam_id=cam,
                        t=day_start + k * step,
                        n_car=counts["car"],
                        n_truck=counts["truck"],
                        n_ped=counts["ped"],
                        n_bike=counts["bike"],
                        vp_id=scenario.vp_id,
                    )
                )
    truth = {key: _stats_from_counts(vals) for key, vals in tallies.items()}
    return packets, truth
