"""Scale-space keypoint detection, 128-d descriptors, and ratio-test matching.

The detector is a compact SIFT variant: 4-octave Gaussian pyramid with 3
scales per octave, difference-of-Gaussian extrema over 3x3x3 neighborhoods,
one-step quadratic subpixel refinement, contrast threshold 0.03 on [0, 1]
intensities, edge rejection at Hessian trace/det ratio 10, and a single
dominant orientation per keypoint. Everything is a pure function of the
frame bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .corpus import Frame

N_OCTAVES = 4
SCALES_PER_OCTAVE = 3
SIGMA_BASE = 1.6
SIGMA_INPUT = 0.5
CONTRAST_THRESHOLD = 0.03
EDGE_RATIO = 10.0
BORDER_PX = 8
MAX_KEYPOINTS_DEFAULT = 2000
DESCRIPTOR_SIZE = 128
_GRID = 4  # descriptor spatial grid
_ORI_BINS_DESC = 8
_ORI_BINS_HIST = 36


@dataclass(frozen=True)
class Keypoint:
    """Subpixel image location with scale, orientation (deg), and DoG response."""

    x: float
    y: float
    scale: float
    orientation: float
    response: float


@dataclass
class MatchSet:
    """Ratio-test survivors between two descriptor sets (query side one-to-one)."""

    pairs: list[tuple[int, int, float]]
    frame_a: str = ""
    frame_b: str = ""

    def __len__(self) -> int:
        return len(self.pairs)


def _gaussian_pyramid(img: np.ndarray) -> list[list[np.ndarray]]:
    """6 progressively blurred images per octave; next octave from image 3, halved."""
    k = 2.0 ** (1.0 / SCALES_PER_OCTAVE)
    sigmas = [SIGMA_BASE * k**s for s in range(SCALES_PER_OCTAVE + 3)]
    base_blur = float(np.sqrt(max(SIGMA_BASE**2 - SIGMA_INPUT**2, 0.01)))
    octaves: list[list[np.ndarray]] = []
    current = cv2.GaussianBlur(img, (0, 0), base_blur)
    for _ in range(N_OCTAVES):
        images = [current]
        for s in range(1, SCALES_PER_OCTAVE + 3):
            inc = float(np.sqrt(sigmas[s] ** 2 - sigmas[s - 1] ** 2))
            images.append(cv2.GaussianBlur(images[-1], (0, 0), inc))
        octaves.append(images)
        nxt = images[SCALES_PER_OCTAVE]
        if min(nxt.shape) < 16:
            break
        current = nxt[::2, ::2].copy()
    return octaves


def _dog_stack(images: list[np.ndarray]) -> np.ndarray:
    stack = np.stack(images)
    return stack[1:] - stack[:-1]


def _extrema_mask(dog: np.ndarray, s: int) -> np.ndarray:
    """Strict 26-neighbor extremum test for DoG layer s against s-1 and s+1."""
    center = dog[s, 1:-1, 1:-1]
    strong = np.abs(center) >= 0.8 * CONTRAST_THRESHOLD
    is_max = strong.copy()
    is_min = strong.copy()
    for ds in (-1, 0, 1):
        layer = dog[s + ds]
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if ds == 0 and dy == 0 and dx == 0:
                    continue
                nb = layer[1 + dy : layer.shape[0] - 1 + dy, 1 + dx : layer.shape[1] - 1 + dx]
                is_max &= center > nb
                is_min &= center < nb
                if not (is_max.any() or is_min.any()):
                    return np.zeros_like(strong)
    return is_max | is_min


def _refine(dog: np.ndarray, s: np.ndarray, y: np.ndarray, x: np.ndarray):
    """One quadratic-fit step; returns offsets, refined value, spatial Hessian terms."""
    d = dog
    v = d[s, y, x]
    g = np.stack(
        [
            (d[s + 1, y, x] - d[s - 1, y, x]) / 2.0,
            (d[s, y + 1, x] - d[s, y - 1, x]) / 2.0,
            (d[s, y, x + 1] - d[s, y, x - 1]) / 2.0,
        ],
        axis=1,
    )
    hss = d[s + 1, y, x] + d[s - 1, y, x] - 2 * v
    hyy = d[s, y + 1, x] + d[s, y - 1, x] - 2 * v
    hxx = d[s, y, x + 1] + d[s, y, x - 1] - 2 * v
    hsy = (d[s + 1, y + 1, x] - d[s + 1, y - 1, x] - d[s - 1, y + 1, x] + d[s - 1, y - 1, x]) / 4.0
    hsx = (d[s + 1, y, x + 1] - d[s + 1, y, x - 1] - d[s - 1, y, x + 1] + d[s - 1, y, x - 1]) / 4.0
    hyx = (d[s, y + 1, x + 1] - d[s, y + 1, x - 1] - d[s, y - 1, x + 1] + d[s, y - 1, x - 1]) / 4.0
    hess = np.empty((len(v), 3, 3))
    hess[:, 0, 0] = hss
    hess[:, 1, 1] = hyy
    hess[:, 2, 2] = hxx
    hess[:, 0, 1] = hess[:, 1, 0] = hsy
    hess[:, 0, 2] = hess[:, 2, 0] = hsx
    hess[:, 1, 2] = hess[:, 2, 1] = hyx
    det = np.linalg.det(hess)
    solvable = np.abs(det) > 1e-12
    offset = np.zeros((len(v), 3))
    if solvable.any():
        offset[solvable] = np.linalg.solve(hess[solvable], -g[solvable][:, :, None])[:, :, 0]
    value = v + 0.5 * np.einsum("ij,ij->i", g, offset)
    return offset, value, solvable, hxx, hyy, hyx


@dataclass(frozen=True)
class _Candidate:
    x: float
    y: float
    sigma: float
    response: float
    octave: int
    s_idx: int


def _octave_candidates(dog: np.ndarray, octave: int) -> list[_Candidate]:
    """Refined extrema in original-image coordinates for one octave."""
    out: list[_Candidate] = []
    factor = float(2**octave)
    for s in range(1, SCALES_PER_OCTAVE + 1):
        mask = _extrema_mask(dog, s)
        ys, xs = np.nonzero(mask)
        if len(ys) == 0:
            continue
        ys = ys + 1
        xs = xs + 1
        ss = np.full_like(ys, s)
        offset, value, solvable, hxx, hyy, hyx = _refine(dog, ss, ys, xs)
        keep = (
            solvable
            & (np.abs(offset).max(axis=1) <= 0.6)
            & (np.abs(value) >= CONTRAST_THRESHOLD)
        )
        # Edge rejection on the 2-D spatial Hessian.
        tr = hxx + hyy
        dt = hxx * hyy - hyx * hyx
        keep &= (dt > 0) & (tr * tr / np.where(dt > 0, dt, 1.0) < (EDGE_RATIO + 1) ** 2 / EDGE_RATIO)
        for i in np.nonzero(keep)[0]:
            sx = (xs[i] + offset[i, 2]) * factor
            sy = (ys[i] + offset[i, 1]) * factor
            sigma = SIGMA_BASE * 2.0 ** (octave + (s + offset[i, 0]) / SCALES_PER_OCTAVE)
            out.append(
                _Candidate(float(sx), float(sy), float(sigma), float(abs(value[i])), octave, s)
            )
    return out


def _gradients(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    dx = np.zeros_like(image)
    dy = np.zeros_like(image)
    dx[:, 1:-1] = (image[:, 2:] - image[:, :-2]) / 2.0
    dy[1:-1, :] = (image[2:, :] - image[:-2, :]) / 2.0
    return dx, dy


def _dominant_orientation(dx: np.ndarray, dy: np.ndarray, cx: float, cy: float, sigma: float) -> float:
    """Single strongest peak of the 36-bin gradient-orientation histogram, degrees."""
    rows, cols = dx.shape
    win_sigma = 1.5 * sigma
    radius = max(int(round(3.0 * win_sigma)), 1)
    x0, x1 = max(0, int(cx) - radius), min(cols, int(cx) + radius + 1)
    y0, y1 = max(0, int(cy) - radius), min(rows, int(cy) + radius + 1)
    gx = dx[y0:y1, x0:x1]
    gy = dy[y0:y1, x0:x1]
    xs = np.arange(x0, x1) - cx
    ys = np.arange(y0, y1) - cy
    w = np.exp(-(ys[:, None] ** 2 + xs[None, :] ** 2) / (2 * win_sigma**2))
    mag = np.sqrt(gx * gx + gy * gy) * w
    ang = np.degrees(np.arctan2(gy, gx)) % 360.0
    hist = np.zeros(_ORI_BINS_HIST)
    bins = (ang / 360.0 * _ORI_BINS_HIST).astype(int) % _ORI_BINS_HIST
    np.add.at(hist, bins.ravel(), mag.ravel())
    for _ in range(2):
        hist = (np.roll(hist, 1) + hist + np.roll(hist, -1)) / 3.0
    k = int(np.argmax(hist))
    left, right = hist[(k - 1) % _ORI_BINS_HIST], hist[(k + 1) % _ORI_BINS_HIST]
    denom = left - 2 * hist[k] + right
    shift = 0.0 if denom == 0 else 0.5 * (left - right) / denom
    return ((k + shift + 0.5) * (360.0 / _ORI_BINS_HIST)) % 360.0


def _descriptor(
    dx: np.ndarray, dy: np.ndarray, cx: float, cy: float, sigma: float, angle_deg: float
) -> np.ndarray:
    """4x4x8 gradient histogram, L2-normalized, clamped at 0.2, renormalized."""
    rows, cols = dx.shape
    hist_width = 3.0 * sigma
    radius = int(round(hist_width * np.sqrt(2) * (_GRID + 1) * 0.5))
    radius = max(radius, 2)
    x0, x1 = max(0, int(cx) - radius), min(cols, int(cx) + radius + 1)
    y0, y1 = max(0, int(cy) - radius), min(rows, int(cy) + radius + 1)
    xs = np.arange(x0, x1, dtype=np.float64) - cx
    ys = np.arange(y0, y1, dtype=np.float64) - cy
    xg, yg = np.meshgrid(xs, ys)
    th = np.deg2rad(angle_deg)
    ct, st = np.cos(th), np.sin(th)
    c_rot = (xg * ct + yg * st) / hist_width
    r_rot = (-xg * st + yg * ct) / hist_width
    rbin = r_rot + _GRID / 2 - 0.5
    cbin = c_rot + _GRID / 2 - 0.5
    inside = (rbin > -1) & (rbin < _GRID) & (cbin > -1) & (cbin < _GRID)
    if not inside.any():
        return np.zeros(DESCRIPTOR_SIZE)
    gx = dx[y0:y1, x0:x1][inside]
    gy = dy[y0:y1, x0:x1][inside]
    mag = np.sqrt(gx * gx + gy * gy)
    weight = np.exp(-(c_rot[inside] ** 2 + r_rot[inside] ** 2) / (0.5 * _GRID**2))
    obin = ((np.degrees(np.arctan2(gy, gx)) - angle_deg) % 360.0) / 360.0 * _ORI_BINS_DESC
    rb, cb = rbin[inside], cbin[inside]
    contrib = mag * weight

    hist = np.zeros((_GRID, _GRID, _ORI_BINS_DESC))
    r0 = np.floor(rb).astype(int)
    c0 = np.floor(cb).astype(int)
    o0 = np.floor(obin).astype(int)
    fr, fc, fo = rb - r0, cb - c0, obin - o0
    for ar in (0, 1):
        wr = contrib * (fr if ar else 1 - fr)
        rr = r0 + ar
        row_ok = (rr >= 0) & (rr < _GRID)
        for ac in (0, 1):
            wc = wr * (fc if ac else 1 - fc)
            cc = c0 + ac
            col_ok = row_ok & (cc >= 0) & (cc < _GRID)
            if not col_ok.any():
                continue
            for ao in (0, 1):
                wo = wc * (fo if ao else 1 - fo)
                oo = (o0 + ao) % _ORI_BINS_DESC
                flat = (rr[col_ok] * _GRID + cc[col_ok]) * _ORI_BINS_DESC + oo[col_ok]
                np.add.at(hist.reshape(-1), flat, wo[col_ok])

    vec = hist.ravel()
    norm = np.linalg.norm(vec)
    if norm < 1e-12:
        return np.zeros(DESCRIPTOR_SIZE)
    vec = np.minimum(vec / norm, 0.2)
    norm = np.linalg.norm(vec)
    return vec / norm


def detect_keypoints(
    frame: Frame, max_count: int = MAX_KEYPOINTS_DEFAULT
) -> tuple[list[Keypoint], np.ndarray]:
    """Detect up to max_count keypoints, strongest response first.

    Returns (keypoints, descriptors) with descriptors row i belonging to
    keypoint i. A degenerate (constant) image yields empty results.
    """
    if max_count < 1:
        raise ValueError("max_count must be >= 1")
    img = frame.pixels.astype(np.float64) / 255.0
    rows, cols = img.shape
    if img.max() - img.min() < 1e-12:
        return [], np.zeros((0, DESCRIPTOR_SIZE))

    pyramid = _gaussian_pyramid(img)
    candidates: list[_Candidate] = []
    for octave, images in enumerate(pyramid):
        dog = _dog_stack(images)
        candidates.extend(_octave_candidates(dog, octave))

    candidates = [
        c
        for c in candidates
        if BORDER_PX <= c.x < cols - BORDER_PX and BORDER_PX <= c.y < rows - BORDER_PX
    ]
    # Strongest first; ties resolved spatially so ordering is reproducible.
    candidates.sort(key=lambda c: (-c.response, c.y, c.x, c.sigma))
    candidates = candidates[:max_count]

    grads: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}

    def octave_grad(octave: int, s: int) -> tuple[np.ndarray, np.ndarray]:
        key = (octave, s)
        if key not in grads:
            grads[key] = _gradients(pyramid[octave][s])
        return grads[key]

    keypoints: list[Keypoint] = []
    descriptors: list[np.ndarray] = []
    for c in candidates:
        dx, dy = octave_grad(c.octave, c.s_idx)
        rel = c.sigma / 2.0**c.octave  # scale in this octave's pixel units
        fx, fy = c.x / 2.0**c.octave, c.y / 2.0**c.octave
        angle = _dominant_orientation(dx, dy, fx, fy, rel)
        desc = _descriptor(dx, dy, fx, fy, rel, angle)
        keypoints.append(
            Keypoint(x=c.x, y=c.y, scale=c.sigma, orientation=angle, response=c.response)
        )
        descriptors.append(desc)

    desc_arr = np.vstack(descriptors) if descriptors else np.zeros((0, DESCRIPTOR_SIZE))
    return keypoints, desc_arr


def match_descriptors(
    a: np.ndarray, b: np.ndarray, ratio: float = 0.75, frame_a: str = "", frame_b: str = ""
) -> MatchSet:
    """Lowe ratio-test matching from a into b (Euclidean descriptor distance).

    Pair (i, j) survives iff j is i's nearest neighbor and
    dist(i, j) < ratio * dist(i, second nearest). Fewer than two candidates in
    b leave the ratio test undefined, so the result is empty.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0, 1)")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[0] == 0 or b.shape[0] < 2:
        return MatchSet(pairs=[], frame_a=frame_a, frame_b=frame_b)
    d2 = np.maximum(
        np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * (a @ b.T),
        0.0,
    )
    order = np.argpartition(d2, 1, axis=1)[:, :2]
    rowix = np.arange(a.shape[0])
    first, second = order[:, 0], order[:, 1]
    swap = d2[rowix, first] > d2[rowix, second]
    first[swap], second[swap] = second[swap], first[swap].copy()
    d1 = np.sqrt(d2[rowix, first])
    d2nd = np.sqrt(d2[rowix, second])
    accept = d1 < ratio * d2nd
    pairs = [(int(i), int(first[i]), float(d1[i])) for i in rowix[accept]]
    return MatchSet(pairs=pairs, frame_a=frame_a, frame_b=frame_b)


_CACHE_MAGIC = b"CKP1"
_CACHE_VERSION = 1


def save_keypoints(path: str | Path, keypoints: list[Keypoint], descriptors: np.ndarray) -> None:
    """Write the binary keypoint cache (versioned header + float32 payload)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    kp = np.array(
        [[k.x, k.y, k.scale, k.orientation, k.response] for k in keypoints], dtype=np.float32
    ).reshape(len(keypoints), 5)
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<HI", _CACHE_VERSION, len(keypoints)))
        fh.write(kp.tobytes())
        fh.write(descriptors.astype(np.float32).tobytes())


def load_keypoints(path: str | Path) -> tuple[list[Keypoint], np.ndarray] | None:
    """Read the cache; None when missing or from another format version."""
    path = Path(path)
    if not path.exists():
        return None
    raw = path.read_bytes()
    if len(raw) < 10 or raw[:4] != _CACHE_MAGIC:
        return None
    version, count = struct.unpack("<HI", raw[4:10])
    if version != _CACHE_VERSION:
        return None
    kp_bytes = count * 5 * 4
    kp = np.frombuffer(raw[10 : 10 + kp_bytes], dtype=np.float32).reshape(count, 5)
    desc = np.frombuffer(raw[10 + kp_bytes :], dtype=np.float32).reshape(count, DESCRIPTOR_SIZE)
    keypoints = [
        Keypoint(float(r[0]), float(r[1]), float(r[2]), float(r[3]), float(r[4])) for r in kp
    ]
    return keypoints, desc.astype(np.float64)


def detect_cached(
    frame: Frame, cache_dir: str | Path | None, max_count: int = MAX_KEYPOINTS_DEFAULT
) -> tuple[list[Keypoint], np.ndarray]:
    """detect_keypoints with an optional per-frame binary cache."""
    if cache_dir is None:
        return detect_keypoints(frame, max_count)
    path = Path(cache_dir) / frame.cam_id / f"{frame.timestamp}.bin"
    cached = load_keypoints(path)
    if cached is not None:
        return cached
    keypoints, descriptors = detect_keypoints(frame, max_count)
    save_keypoints(path, keypoints, descriptors)
    return keypoints, descriptors
