"""Static chart and CSV emission: day-of-week density bars per mode and a
map-ready per-camera change table. Non-interactive by design.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .aggregate import (
    AnalysisWindow,
    ChangeRecord,
    Schema,
    aggregate_stats,
    changes_for,
    packet_datetime,
    window_packets,
)
from .corpus import CameraRegistry
from .detection import DetectionPacket

DOW_NAMES = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")


def dow_means(
    packets: list[DetectionPacket],
    window: AnalysisWindow,
    mode: str,
    tz_offset_s: int = 0,
) -> list[float | None]:
    """Mean packet count per day of week inside the window (None = no data)."""
    sums = [0] * 7
    counts = [0] * 7
    for p in window_packets(packets, window, tz_offset_s=tz_offset_s):
        dow = packet_datetime(p, tz_offset_s).weekday()
        sums[dow] += p.count(mode)
        counts[dow] += 1
    return [sums[d] / counts[d] if counts[d] else None for d in range(7)]


def emit_dow_chart(
    pre_packets: list[DetectionPacket],
    post_packets: list[DetectionPacket],
    pre_window: AnalysisWindow,
    post_window: AnalysisWindow,
    mode: str,
    out_dir: str | Path,
    tz_offset_s: int = 0,
) -> tuple[Path, Path]:
    """Grouped day-of-week bar chart plus the CSV holding the identical values."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pre_vals = dow_means(pre_packets, pre_window, mode, tz_offset_s)
    post_vals = dow_means(post_packets, post_window, mode, tz_offset_s)

    csv_path = out_dir / f"dow_{mode}.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dow", pre_window.label, post_window.label])
        for d in range(7):
            writer.writerow(
                [
                    DOW_NAMES[d],
                    "" if pre_vals[d] is None else f"{pre_vals[d]:.6f}",
                    "" if post_vals[d] is None else f"{post_vals[d]:.6f}",
                ]
            )

    fig, ax = plt.subplots(figsize=(8, 4))
    xs = range(7)
    width = 0.4
    ax.bar(
        [x - width / 2 for x in xs],
        [v if v is not None else 0.0 for v in pre_vals],
        width,
        label=pre_window.label,
    )
    ax.bar(
        [x + width / 2 for x in xs],
        [v if v is not None else 0.0 for v in post_vals],
        width,
        label=post_window.label,
    )
    ax.set_xticks(list(xs))
    ax.set_xticklabels(DOW_NAMES)
    ax.set_ylabel(f"mean {mode} per packet")
    ax.set_title(f"Daily average by day of week: {mode}")
    ax.legend()
    fig.tight_layout()
    png_path = out_dir / f"dow_{mode}.png"
    fig.savefig(png_path)
    plt.close(fig)
    return png_path, csv_path


def emit_map_csv(
    pre_packets: list[DetectionPacket],
    post_packets: list[DetectionPacket],
    pre_window: AnalysisWindow,
    post_window: AnalysisWindow,
    mode: str,
    registry: CameraRegistry,
    out_dir: str | Path,
    tz_offset_s: int = 0,
) -> Path:
    """Per-camera (lat, lon, pct_delta) rows for map rendering."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pre_b = aggregate_stats(
        window_packets(pre_packets, pre_window, tz_offset_s=tz_offset_s), Schema.CAMERA, mode
    )
    post_b = aggregate_stats(
        window_packets(post_packets, post_window, tz_offset_s=tz_offset_s), Schema.CAMERA, mode
    )
    records: list[ChangeRecord] = changes_for(pre_b, post_b)
    path = out_dir / f"map_{mode}.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cam_id", "lat", "lon", "pct_delta"])
        for r in records:
            if r.partition not in registry:
                continue
            cam = registry.get(r.partition)
            writer.writerow(
                [
                    cam.cam_id,
                    f"{cam.latitude:.6f}",
                    f"{cam.longitude:.6f}",
                    "" if r.pct_delta is None else f"{r.pct_delta:.6f}",
                ]
            )
    return path
