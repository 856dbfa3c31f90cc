"""Pluggable detector boundary: confidence filtering, per-class counts, density,
and detection-packet assembly.

The neural detector itself lives behind a file/HTTP boundary; detections enter
as JSON-lines records and leave as flattened packets in an append-only CSV.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .errors import CalibrationError

logger = logging.getLogger(__name__)


class ObjectClass(str, enum.Enum):
    CAR = "car"
    TRUCK = "truck"
    PED = "ped"
    BIKE = "bike"


MODES = [c.value for c in ObjectClass]


@dataclass(frozen=True)
class Detection:
    """One detector output: box, class label, confidence score."""

    x: float
    y: float
    w: float
    h: float
    cls: ObjectClass
    score: float

    def __post_init__(self) -> None:
        if self.w <= 0 or self.h <= 0:
            raise ValueError("box width/height must be positive")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("score must lie in [0, 1]")
        if not isinstance(self.cls, ObjectClass):
            object.__setattr__(self, "cls", ObjectClass(self.cls))


@dataclass(frozen=True)
class RoiCalibration:
    """Calibrated road-surface area (m^2) for one (camera, viewpoint)."""

    cam_id: str
    vp_id: int
    area_m2: float

    def __post_init__(self) -> None:
        if self.area_m2 <= 0:
            raise CalibrationError("area_m2 must be positive")


@dataclass(frozen=True)
class DetectionPacket:
    """Flattened per-frame record: [cam_id, t, per-class counts, vp_id]."""

    cam_id: str
    t: int
    n_car: int
    n_truck: int
    n_ped: int
    n_bike: int
    vp_id: int

    def __post_init__(self) -> None:
        for name in ("n_car", "n_truck", "n_ped", "n_bike"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def count(self, mode: str) -> int:
        return getattr(self, f"n_{ObjectClass(mode).value}")


def filter_detections(dets: list[Detection], threshold: float = 0.35) -> list[Detection]:
    """Keep detections with score >= threshold (inclusive), preserving order."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    return [d for d in dets if d.score >= threshold]


def count_by_class(dets: list[Detection]) -> dict[str, int]:
    """Tally detections per class; classes absent from input count 0."""
    counts = {mode: 0 for mode in MODES}
    for d in dets:
        counts[d.cls.value] += 1
    return counts


def density(count: int, roi: RoiCalibration) -> float:
    """Objects per square metre for one frame."""
    if roi.area_m2 <= 0:
        raise CalibrationError("area_m2 must be positive")
    return count / roi.area_m2


def make_packet(cam_id: str, t: int, counts: dict[str, int], vp_id: int) -> DetectionPacket:
    return DetectionPacket(
        cam_id=cam_id,
        t=t,
        n_car=counts.get("car", 0),
        n_truck=counts.get("truck", 0),
        n_ped=counts.get("ped", 0),
        n_bike=counts.get("bike", 0),
        vp_id=vp_id,
    )


PACKET_HEADER = ["cam_id", "ts", "n_car", "n_truck", "n_ped", "n_bike", "vp_id"]


def write_packets(packets: list[DetectionPacket], path: str | Path, append: bool = False) -> None:
    """Write packets to the append-only CSV store."""
    path = Path(path)
    fresh = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(PACKET_HEADER)
        for p in packets:
            writer.writerow([p.cam_id, p.t, p.n_car, p.n_truck, p.n_ped, p.n_bike, p.vp_id])


def read_packets(path: str | Path) -> list[DetectionPacket]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            DetectionPacket(
                cam_id=row["cam_id"],
                t=int(row["ts"]),
                n_car=int(row["n_car"]),
                n_truck=int(row["n_truck"]),
                n_ped=int(row["n_ped"]),
                n_bike=int(row["n_bike"]),
                vp_id=int(row["vp_id"]),
            )
            for row in reader
        ]


@dataclass
class ImportReport:
    """Detections grouped per frame key, plus malformed-line bookkeeping."""

    by_frame: dict[tuple[str, int], list[Detection]]
    malformed: int = 0

    @property
    def total(self) -> int:
        return sum(len(v) for v in self.by_frame.values())


def import_detections(path: str | Path) -> ImportReport:
    """Read detection JSON-lines ``{cam_id, ts, x, y, w, h, class, score}``.

    Malformed lines (bad JSON, unknown class, out-of-range fields) are counted
    and skipped.
    """
    by_frame: dict[tuple[str, int], list[Detection]] = {}
    malformed = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                det = Detection(
                    x=float(rec["x"]),
                    y=float(rec["y"]),
                    w=float(rec["w"]),
                    h=float(rec["h"]),
                    cls=ObjectClass(rec["class"]),
                    score=float(rec["score"]),
                )
                key = (str(rec["cam_id"]), int(rec["ts"]))
            except (KeyError, ValueError, TypeError, json.JSONDecodeError):
                logger.warning("skipping malformed detection line %d of %s", lineno, path)
                malformed += 1
                continue
            by_frame.setdefault(key, []).append(det)
    return ImportReport(by_frame=by_frame, malformed=malformed)


ROI_HEADER = ["cam_id", "vp_id", "area_m2"]


def load_roi_table(path: str | Path) -> dict[tuple[str, int], RoiCalibration]:
    """Load ROI calibrations from CSV cam_id,vp_id,area_m2."""
    table: dict[tuple[str, int], RoiCalibration] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            roi = RoiCalibration(row["cam_id"], int(row["vp_id"]), float(row["area_m2"]))
            table[(roi.cam_id, roi.vp_id)] = roi
    return table


def roi_for(
    table: dict[tuple[str, int], RoiCalibration], cam_id: str, vp_id: int
) -> RoiCalibration:
    # Uncalibrated views default to 1 m^2 so density degrades to a raw count.
    return table.get((cam_id, vp_id), RoiCalibration(cam_id, vp_id, 1.0))


def sweep_score_threshold(
    scored_labels: list[tuple[float, bool]],
    n_ground_truth: int,
    beta: float = 0.5,
) -> tuple[float, float]:
    """Offline operating-point picker: maximize F_beta over thresholds 0.05..0.95.

    scored_labels holds (score, is_true_positive) for every raw detection on a
    labeled validation set; n_ground_truth is the number of annotated objects.
    Returns (best_threshold, best_f_beta).
    """
    if n_ground_truth <= 0:
        raise ValueError("n_ground_truth must be positive")
    best_t, best_f = 0.05, -1.0
    b2 = beta * beta
    for step in range(5, 96):
        t = step / 100.0
        kept = [(s, ok) for s, ok in scored_labels if s >= t]
        tp = sum(1 for _, ok in kept if ok)
        precision = tp / len(kept) if kept else 0.0
        recall = tp / n_ground_truth
        denom = b2 * precision + recall
        f = (1 + b2) * precision * recall / denom if denom > 0 else 0.0
        if f > best_f:
            best_t, best_f = t, f
    return best_t, best_f
