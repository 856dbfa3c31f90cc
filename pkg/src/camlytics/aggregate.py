"""Temporal harmonization of pre/post windows, per-partition statistics,
change computation, and top-K change lists.

Counts are integers, so totals and power sums are exact; every derived
statistic is a deterministic function of those exact integers regardless of
summation order.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from datetime import date, datetime, timezone

from .corpus import CameraRegistry
from .detection import MODES, DetectionPacket
from .errors import AggregationError, EmptyHarmonizationError, PartitionMismatchError

PEAK_HOURS_DEFAULT = (6, 20)  # 06:00 inclusive .. 20:00 exclusive


class DayFilter(str, enum.Enum):
    WEEKDAY = "weekday"
    WEEKEND = "weekend"
    ALL = "all"


class PeriodFilter(str, enum.Enum):
    PEAK = "peak"
    OFFPEAK = "offpeak"
    ALL = "all"


class Schema(str, enum.Enum):
    CAMERA = "camera"
    ZONE = "zone"
    BOROUGH = "borough"


@dataclass(frozen=True)
class AnalysisWindow:
    """Labeled date range plus day-of-week and period filters."""

    label: str
    start: date
    end: date
    day_filter: DayFilter = DayFilter.ALL
    period_filter: PeriodFilter = PeriodFilter.ALL

    def __post_init__(self) -> None:
        if self.start > self.end:
            raise ValueError("window start must not be after end")
        if not isinstance(self.day_filter, DayFilter):
            object.__setattr__(self, "day_filter", DayFilter(self.day_filter))
        if not isinstance(self.period_filter, PeriodFilter):
            object.__setattr__(self, "period_filter", PeriodFilter(self.period_filter))


def packet_datetime(packet: DetectionPacket, tz_offset_s: int = 0) -> datetime:
    return datetime.fromtimestamp(packet.t + tz_offset_s, tz=timezone.utc)


def _in_window(
    packet: DetectionPacket,
    window: AnalysisWindow,
    peak_hours: tuple[int, int],
    tz_offset_s: int,
) -> bool:
    dt = packet_datetime(packet, tz_offset_s)
    d = dt.date()
    if not window.start <= d <= window.end:
        return False
    if window.day_filter is DayFilter.WEEKDAY and d.weekday() >= 5:
        return False
    if window.day_filter is DayFilter.WEEKEND and d.weekday() < 5:
        return False
    if window.period_filter is not PeriodFilter.ALL:
        peak = peak_hours[0] <= dt.hour < peak_hours[1]
        if window.period_filter is PeriodFilter.PEAK and not peak:
            return False
        if window.period_filter is PeriodFilter.OFFPEAK and peak:
            return False
    return True


def window_packets(
    packets: list[DetectionPacket],
    window: AnalysisWindow,
    peak_hours: tuple[int, int] = PEAK_HOURS_DEFAULT,
    tz_offset_s: int = 0,
) -> list[DetectionPacket]:
    return [p for p in packets if _in_window(p, window, peak_hours, tz_offset_s)]


def day_key(packet: DetectionPacket, window: AnalysisWindow, tz_offset_s: int = 0) -> tuple[int, int]:
    """Calendar position inside the window: (week-of-window, day-of-week)."""
    d = packet_datetime(packet, tz_offset_s).date()
    return ((d - window.start).days // 7, d.weekday())


def harmonize(
    pre_packets: list[DetectionPacket],
    post_packets: list[DetectionPacket],
    pre_window: AnalysisWindow,
    post_window: AnalysisWindow,
    peak_hours: tuple[int, int] = PEAK_HOURS_DEFAULT,
    tz_offset_s: int = 0,
) -> tuple[list[DetectionPacket], list[DetectionPacket]]:
    """Restrict both sides to matched (week-of-window, day-of-week) positions.

    Days missing on either side are removed from both (listwise deletion).
    """
    if not pre_packets or not post_packets:
        raise ValueError("both packet sets must be non-empty")
    pre_kept = window_packets(pre_packets, pre_window, peak_hours, tz_offset_s)
    post_kept = window_packets(post_packets, post_window, peak_hours, tz_offset_s)
    pre_days = {day_key(p, pre_window, tz_offset_s) for p in pre_kept}
    post_days = {day_key(p, post_window, tz_offset_s) for p in post_kept}
    matched = pre_days & post_days
    if not matched:
        raise EmptyHarmonizationError(
            f"no overlapping day positions between {pre_window.label!r} and {post_window.label!r}"
        )
    pre_out = [p for p in pre_kept if day_key(p, pre_window, tz_offset_s) in matched]
    post_out = [p for p in post_kept if day_key(p, post_window, tz_offset_s) in matched]
    return pre_out, post_out


@dataclass(frozen=True)
class StatBundle:
    """Aggregate statistics for one (partition, mode)."""

    partition: str
    mode: str
    total: int
    mean: float
    median: float
    std: float
    sample_count: int


def _stats(partition: str, mode: str, values: list[int]) -> StatBundle:
    n = len(values)
    total = sum(values)
    mean = total / n
    ordered = sorted(values)
    mid = n // 2
    median = float(ordered[mid]) if n % 2 else (ordered[mid - 1] + ordered[mid]) / 2.0
    if n < 2:
        std = 0.0  # single sample: reported as 0 rather than undefined
    else:
        sq = sum(v * v for v in values)
        var = (sq - total * total / n) / (n - 1)
        std = var**0.5 if var > 0 else 0.0
    return StatBundle(partition, mode, total, mean, median, std, n)


def _partition_of(packet: DetectionPacket, schema: Schema, registry: CameraRegistry | None) -> str:
    if schema is Schema.CAMERA:
        return packet.cam_id
    if registry is None or packet.cam_id not in registry:
        raise AggregationError(f"unregistered camera in {schema.value} aggregation: {packet.cam_id}")
    record = registry.get(packet.cam_id)
    return record.zone_flag.value if schema is Schema.ZONE else record.borough


def aggregate_stats(
    packets: list[DetectionPacket],
    schema: Schema | str,
    mode: str,
    registry: CameraRegistry | None = None,
) -> list[StatBundle]:
    """Per-partition total/mean/median/std over per-packet counts of one mode."""
    schema = Schema(schema)
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if schema is not Schema.CAMERA:
        offenders = sorted(
            {p.cam_id for p in packets if registry is None or p.cam_id not in registry}
        )
        if offenders:
            raise AggregationError(
                f"unregistered cameras under {schema.value} schema: {offenders}"
            )
    groups: dict[str, list[int]] = {}
    for p in sorted(packets, key=lambda p: (p.cam_id, p.t)):
        groups.setdefault(_partition_of(p, schema, registry), []).append(p.count(mode))
    return [_stats(part, mode, values) for part, values in sorted(groups.items())]


@dataclass(frozen=True)
class ChangeRecord:
    """Pre/post comparison for one partition and mode; pct_delta None when pre = 0."""

    partition: str
    mode: str
    pre_value: float
    post_value: float
    delta: float
    pct_delta: float | None


def change(pre: StatBundle, post: StatBundle, basis: str = "mean") -> ChangeRecord:
    """Absolute and relative change on the chosen basis (mean or total)."""
    if pre.partition != post.partition or pre.mode != post.mode:
        raise PartitionMismatchError(
            f"cannot compare {pre.partition}/{pre.mode} with {post.partition}/{post.mode}"
        )
    if basis not in ("mean", "total"):
        raise ValueError("basis must be 'mean' or 'total'")
    pre_value = float(getattr(pre, basis))
    post_value = float(getattr(post, basis))
    delta = post_value - pre_value
    pct = 100.0 * delta / pre_value if pre_value != 0 else None
    return ChangeRecord(pre.partition, pre.mode, pre_value, post_value, delta, pct)


def changes_for(
    pre_bundles: list[StatBundle], post_bundles: list[StatBundle], basis: str = "mean"
) -> list[ChangeRecord]:
    """Pairwise changes over partitions present on both sides, sorted by partition."""
    pre_by = {(b.partition, b.mode): b for b in pre_bundles}
    post_by = {(b.partition, b.mode): b for b in post_bundles}
    keys = sorted(set(pre_by) & set(post_by))
    return [change(pre_by[k], post_by[k], basis) for k in keys]


def top_changes(records: list[ChangeRecord], k: int, direction: str) -> list[ChangeRecord]:
    """k records with the largest (increase) or smallest (decrease) pct_delta.

    Records with undefined pct_delta are excluded; ties break on larger
    |delta|, then partition key.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if direction not in ("increase", "decrease"):
        raise ValueError("direction must be 'increase' or 'decrease'")
    defined = [r for r in records if r.pct_delta is not None]
    sign = -1.0 if direction == "increase" else 1.0
    defined.sort(key=lambda r: (sign * r.pct_delta, -abs(r.delta), r.partition))
    return defined[:k]


def compare_windows(
    pre_packets: list[DetectionPacket],
    post_packets: list[DetectionPacket],
    pre_window: AnalysisWindow,
    post_window: AnalysisWindow,
    schema: Schema | str,
    mode: str,
    basis: str = "mean",
    registry: CameraRegistry | None = None,
    peak_hours: tuple[int, int] = PEAK_HOURS_DEFAULT,
    tz_offset_s: int = 0,
) -> tuple[list[ChangeRecord], list[ChangeRecord]]:
    """Headline changes (listwise-deleted days) plus the sensitivity pass.

    The sensitivity pass keeps each side's full set of available days, which
    for the mean basis coincides with imputing each missing day at that side's
    own mean.
    """
    pre_h, post_h = harmonize(pre_packets, post_packets, pre_window, post_window, peak_hours, tz_offset_s)
    headline = changes_for(
        aggregate_stats(pre_h, schema, mode, registry),
        aggregate_stats(post_h, schema, mode, registry),
        basis,
    )
    pre_all = window_packets(pre_packets, pre_window, peak_hours, tz_offset_s)
    post_all = window_packets(post_packets, post_window, peak_hours, tz_offset_s)
    sensitivity = changes_for(
        aggregate_stats(pre_all, schema, mode, registry),
        aggregate_stats(post_all, schema, mode, registry),
        basis,
    )
    return headline, sensitivity
