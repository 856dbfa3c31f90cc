"""Camera registry, snapshot sampling, and raw-frame persistence.

Snapshots are stored as 8-bit grayscale PNGs under ``frames_gray/<cam_id>/<ts>.png``.
Sampling aligns to wall-clock boundaries (multiples of the interval in Unix time)
and picks the snapshot nearest each boundary.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
from bisect import bisect_left
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .errors import DuplicateCameraError, FrameStoreError, UnknownCameraError

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}


class ZoneFlag(str, enum.Enum):
    INSIDE = "inside"
    BOUNDARY = "boundary"
    OUTSIDE = "outside"


@dataclass(frozen=True)
class CameraRecord:
    """One registered camera: id, geocoordinates, borough, zone flag, feed source."""

    cam_id: str
    latitude: float
    longitude: float
    borough: str
    zone_flag: ZoneFlag
    source: str = ""

    def __post_init__(self) -> None:
        if not self.cam_id:
            raise ValueError("cam_id must be non-empty")
        if not isinstance(self.zone_flag, ZoneFlag):
            object.__setattr__(self, "zone_flag", ZoneFlag(self.zone_flag))


class CameraRegistry:
    """Read-mostly camera table keyed by unique cam_id."""

    def __init__(self) -> None:
        self._records: dict[str, CameraRecord] = {}

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, cam_id: str) -> bool:
        return cam_id in self._records

    def __iter__(self):
        return iter(self._records.values())

    def get(self, cam_id: str) -> CameraRecord:
        try:
            return self._records[cam_id]
        except KeyError:
            raise UnknownCameraError(f"camera {cam_id!r} is not registered") from None

    def register(self, record: CameraRecord) -> None:
        if record.cam_id in self._records:
            raise DuplicateCameraError(f"camera {record.cam_id!r} already registered")
        self._records[record.cam_id] = record

    def cam_ids(self) -> list[str]:
        return sorted(self._records)

    def count_zone(self, flag: ZoneFlag) -> int:
        return sum(1 for r in self._records.values() if r.zone_flag is flag)


REGISTRY_HEADER = ["cam_id", "lat", "lon", "borough", "zone_flag", "source"]


def load_registry(path: str | Path) -> CameraRegistry:
    """Load a registry from CSV with header cam_id,lat,lon,borough,zone_flag,source."""
    registry = CameraRegistry()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(REGISTRY_HEADER) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"registry CSV missing columns: {sorted(missing)}")
        for row in reader:
            registry.register(
                CameraRecord(
                    cam_id=row["cam_id"],
                    latitude=float(row["lat"]),
                    longitude=float(row["lon"]),
                    borough=row["borough"],
                    zone_flag=ZoneFlag(row["zone_flag"]),
                    source=row["source"],
                )
            )
    return registry


def save_registry(registry: CameraRegistry, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REGISTRY_HEADER)
        for cam_id in registry.cam_ids():
            r = registry.get(cam_id)
            writer.writerow(
                [r.cam_id, r.latitude, r.longitude, r.borough, r.zone_flag.value, r.source]
            )


@dataclass
class Frame:
    """One grayscale snapshot: camera id, Unix timestamp (s), uint8 pixel matrix."""

    cam_id: str
    timestamp: int
    pixels: np.ndarray
    source_path: str = ""

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("pixels must be a non-empty 2-D matrix")
        if px.dtype != np.uint8:
            raise ValueError("pixels must be 8-bit (uint8)")
        self.pixels = px

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape  # (rows, cols)


def _boundaries(first_ts: int, last_ts: int, interval_s: int) -> range:
    # Wall-clock alignment: boundaries are the multiples of interval_s covering the stream.
    start = (first_ts // interval_s) * interval_s
    stop = -((-last_ts) // interval_s) * interval_s
    return range(start, stop + 1, interval_s)


def _nearest_index(timestamps: list[int], target: int) -> int:
    # Nearest timestamp to target; ties broken toward the earlier snapshot.
    pos = bisect_left(timestamps, target)
    if pos == 0:
        return 0
    if pos == len(timestamps):
        return len(timestamps) - 1
    before, after = timestamps[pos - 1], timestamps[pos]
    return pos - 1 if target - before <= after - target else pos


def sample_frames(frames: list[Frame], interval_s: int) -> list[Frame]:
    """Pick, per interval boundary, the snapshot nearest the boundary time.

    Output timestamps are strictly increasing and at least interval_s/2 apart;
    a boundary whose nearest pick falls closer than that to the previous pick
    is skipped.
    """
    if interval_s <= 0:
        raise ValueError("interval_s must be positive")
    if not frames:
        return []
    timestamps = [f.timestamp for f in frames]
    if any(b < a for a, b in zip(timestamps, timestamps[1:])):
        raise ValueError("stream timestamps must be non-decreasing")

    picked: list[Frame] = []
    last_ts: int | None = None
    for boundary in _boundaries(timestamps[0], timestamps[-1], interval_s):
        idx = _nearest_index(timestamps, boundary)
        ts = timestamps[idx]
        if last_ts is not None and ts - last_ts < interval_s / 2:
            continue
        picked.append(frames[idx])
        last_ts = ts
    return picked


@dataclass(frozen=True)
class Gap:
    """A run of interval boundaries with no snapshot inside the half-interval window."""

    cam_id: str
    gap_start: int
    gap_end: int


def find_gaps(cam_id: str, timestamps: list[int], interval_s: int) -> list[Gap]:
    """Boundaries whose nearest snapshot is farther than interval_s/2, merged into runs."""
    if interval_s <= 0:
        raise ValueError("interval_s must be positive")
    if not timestamps:
        return []
    gaps: list[Gap] = []
    run_start: int | None = None
    prev_boundary: int | None = None
    for boundary in _boundaries(timestamps[0], timestamps[-1], interval_s):
        covered = abs(timestamps[_nearest_index(timestamps, boundary)] - boundary) <= interval_s / 2
        if not covered and run_start is None:
            run_start = boundary
        if covered and run_start is not None:
            gaps.append(Gap(cam_id, run_start, prev_boundary))
            run_start = None
        prev_boundary = boundary
    if run_start is not None:
        gaps.append(Gap(cam_id, run_start, prev_boundary))
    return gaps


def append_gap_log(gaps: list[Gap], path: str | Path) -> None:
    with open(path, "a") as fh:
        for g in gaps:
            fh.write(json.dumps({"cam_id": g.cam_id, "gap_start": g.gap_start, "gap_end": g.gap_end}) + "\n")


class FrameStore:
    """Grayscale canonical frame files under ``<root>/<cam_id>/<unix_ts>.png``.

    (cam_id, timestamp) uniqueness is structural: one file per key. Re-putting
    the same frame overwrites byte-identically, keeping ingestion idempotent.
    """

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, cam_id: str, timestamp: int) -> Path:
        return self.root / cam_id / f"{timestamp}.png"

    def put(self, frame: Frame) -> Path:
        path = self._path(frame.cam_id, frame.timestamp)
        path.parent.mkdir(parents=True, exist_ok=True)
        ok, buf = cv2.imencode(".png", frame.pixels)
        if not ok:
            raise FrameStoreError(f"could not encode frame {frame.cam_id}/{frame.timestamp}")
        path.write_bytes(buf.tobytes())
        return path

    def __contains__(self, key: tuple[str, int]) -> bool:
        return self._path(*key).exists()

    def get(self, cam_id: str, timestamp: int) -> Frame:
        path = self._path(cam_id, timestamp)
        pixels = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
        if pixels is None:
            raise FrameStoreError(f"no stored frame {cam_id}/{timestamp}")
        return Frame(cam_id, timestamp, pixels, source_path=str(path))

    def timestamps(self, cam_id: str) -> list[int]:
        cam_dir = self.root / cam_id
        if not cam_dir.is_dir():
            return []
        return sorted(int(p.stem) for p in cam_dir.iterdir() if p.suffix == ".png")

    def frames_for(self, cam_id: str) -> list[Frame]:
        return [self.get(cam_id, ts) for ts in self.timestamps(cam_id)]

    def cam_ids(self) -> list[str]:
        return sorted(p.name for p in self.root.iterdir() if p.is_dir())


@dataclass
class IngestReport:
    """Outcome of one directory ingestion pass."""

    stored: int = 0
    skipped: int = 0
    quarantined: int = 0
    gaps: list[Gap] = field(default_factory=list)


def _parse_frame_path(path: Path) -> tuple[str, int] | None:
    # Layout: <dir>/<cam_id>/<unix_ts>.<ext>
    if path.suffix.lower() not in IMAGE_SUFFIXES:
        return None
    try:
        return path.parent.name, int(path.stem)
    except ValueError:
        return None


def ingest_directory(
    path: str | Path,
    registry: CameraRegistry,
    store: FrameStore,
    quarantine_dir: str | Path | None = None,
    interval_s: int | None = None,
    raw_dir: str | Path | None = None,
) -> IngestReport:
    """Decode every image under ``path/<cam_id>/<ts>.{png,jpg}`` into the store.

    Undecodable files are counted and skipped; frames for unregistered cameras
    are quarantined with a warning. When raw_dir is given, the original bytes
    are kept under ``raw_dir/<cam_id>/<ts>.<ext>`` alongside the canonical
    grayscale copies. When interval_s is given, per-camera gap markers are
    collected for the gap log.
    """
    src = Path(path)
    if not src.is_dir():
        raise FileNotFoundError(f"ingest path {src} does not exist")
    report = IngestReport()
    seen: dict[str, list[int]] = {}
    for file in sorted(src.rglob("*")):
        if not file.is_file():
            continue
        parsed = _parse_frame_path(file)
        if parsed is None:
            report.skipped += 1
            continue
        cam_id, ts = parsed
        if cam_id not in registry:
            logger.warning("quarantined frame for unregistered camera %s: %s", cam_id, file)
            if quarantine_dir is not None:
                qpath = Path(quarantine_dir) / cam_id / file.name
                qpath.parent.mkdir(parents=True, exist_ok=True)
                qpath.write_bytes(file.read_bytes())
            report.quarantined += 1
            continue
        pixels = cv2.imread(str(file), cv2.IMREAD_GRAYSCALE)
        if pixels is None:
            report.skipped += 1
            continue
        if raw_dir is not None:
            raw_path = Path(raw_dir) / cam_id / file.name
            raw_path.parent.mkdir(parents=True, exist_ok=True)
            raw_path.write_bytes(file.read_bytes())
        store.put(Frame(cam_id, ts, pixels, source_path=str(file)))
        report.stored += 1
        seen.setdefault(cam_id, []).append(ts)
    if interval_s is not None:
        for cam_id, stamps in sorted(seen.items()):
            report.gaps.extend(find_gaps(cam_id, sorted(stamps), interval_s))
    return report
