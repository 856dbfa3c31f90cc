"""Pipeline configuration: one YAML tree, range-validated, unknown keys
rejected, with environment-variable overrides for endpoint secrets.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path

import yaml

from .aggregate import AnalysisWindow, DayFilter, PeriodFilter
from .errors import ConfigError

ENV_ENDPOINT_URL = "CAMLYTICS_ENDPOINT_URL"
ENV_ENDPOINT_TOKEN = "CAMLYTICS_ENDPOINT_TOKEN"


@dataclass
class PathsConfig:
    data_dir: Path = Path("data")
    frames: Path | None = None
    frames_gray: Path | None = None
    registry: Path | None = None
    packets: Path | None = None
    roi: Path | None = None
    exemplars: Path | None = None
    keypoint_cache: Path | None = None
    gap_log: Path | None = None
    pairwise_dir: Path | None = None

    def __post_init__(self) -> None:
        self.data_dir = Path(self.data_dir)
        defaults = {
            "frames": self.data_dir / "frames",
            "frames_gray": self.data_dir / "frames_gray",
            "registry": self.data_dir / "registry.csv",
            "packets": self.data_dir / "packets.csv",
            "roi": self.data_dir / "roi.csv",
            "exemplars": self.data_dir / "exemplars.jsonl",
            "keypoint_cache": self.data_dir / "kp",
            "gap_log": self.data_dir / "gaps.jsonl",
            "pairwise_dir": self.data_dir / "pairwise",
        }
        for name, default in defaults.items():
            value = getattr(self, name)
            setattr(self, name, Path(value) if value is not None else default)


_THRESHOLD_RANGES = {
    "ransac_iterations": (1, 1_000_000),
    "inlier_threshold_px": (1e-9, 100.0),
    "min_inlier_ratio": (1e-9, 0.999999),
    "same_view_delta_deg": (1e-9, 180.0),
    "detection_score": (0.0, 1.0),
    "lowe_ratio": (1e-9, 0.999999),
    "top_k_exemplars": (1, 100),
    "max_keypoints": (1, 100_000),
    "all_pairs_limit": (1, 100_000),
}


@dataclass
class ThresholdsConfig:
    ransac_iterations: int = 1000
    inlier_threshold_px: float = 2.0
    min_inlier_ratio: float = 0.25
    same_view_delta_deg: float = 10.0
    detection_score: float = 0.35
    lowe_ratio: float = 0.75
    top_k_exemplars: int = 2
    max_keypoints: int = 2000
    all_pairs_limit: int = 500

    def __post_init__(self) -> None:
        for name, (lo, hi) in _THRESHOLD_RANGES.items():
            value = getattr(self, name)
            if not lo <= value <= hi:
                raise ConfigError(f"thresholds.{name}={value} outside [{lo}, {hi}]")


@dataclass
class SamplingConfig:
    interval_s: int = 1800
    peak_start_hour: int = 6
    peak_end_hour: int = 20
    tz_offset_s: int = 0

    def __post_init__(self) -> None:
        if self.interval_s < 1:
            raise ConfigError("sampling.interval_s must be positive")
        if not 0 <= self.peak_start_hour < self.peak_end_hour <= 24:
            raise ConfigError("sampling peak hours must satisfy 0 <= start < end <= 24")


@dataclass
class EndpointConfig:
    url: str = ""
    token: str | None = None
    mock: bool = True
    temperature: float = 0.2
    top_p: float = 0.9
    n_best: int = 2
    max_retries: int = 3
    sweep: tuple[float, ...] = (0.2, 0.25, 0.3)

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 0.3:
            raise ConfigError("endpoint.temperature must lie in [0.0, 0.3]")
        if not 0.8 <= self.top_p <= 1.0:
            raise ConfigError("endpoint.top_p must lie in [0.8, 1.0]")
        if self.n_best not in (2, 3):
            raise ConfigError("endpoint.n_best must be 2 or 3")
        if not self.mock and not self.url:
            raise ConfigError("endpoint.url is required when endpoint.mock is false")
        self.sweep = tuple(float(t) for t in self.sweep)
        if not self.sweep:
            raise ConfigError("endpoint.sweep must be non-empty")


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    thresholds: ThresholdsConfig = field(default_factory=ThresholdsConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    endpoint: EndpointConfig = field(default_factory=EndpointConfig)
    windows: dict[str, AnalysisWindow] = field(default_factory=dict)

    def window(self, label: str) -> AnalysisWindow:
        if label not in self.windows:
            raise ConfigError(f"window {label!r} is not defined in the configuration")
        return self.windows[label]


def _check_keys(section: str, data: dict, allowed: set[str]) -> None:
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown {section} keys: {sorted(unknown)}")


def _parse_date(value) -> date:
    if isinstance(value, datetime):
        return value.date()
    if isinstance(value, date):
        return value
    return date.fromisoformat(str(value))


def _parse_window(raw: dict) -> AnalysisWindow:
    _check_keys("window", raw, {"label", "start", "end", "day_filter", "period_filter"})
    try:
        return AnalysisWindow(
            label=str(raw["label"]),
            start=_parse_date(raw["start"]),
            end=_parse_date(raw["end"]),
            day_filter=DayFilter(raw.get("day_filter", "all")),
            period_filter=PeriodFilter(raw.get("period_filter", "all")),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad window spec {raw!r}: {exc}") from exc


def load_config(path: str | Path | None = None, env: dict | None = None) -> PipelineConfig:
    """Build the configuration from YAML (optional) plus environment overrides."""
    env = os.environ if env is None else env
    raw: dict = {}
    if path is not None:
        text = Path(path).read_text()
        loaded = yaml.safe_load(text) or {}
        if not isinstance(loaded, dict):
            raise ConfigError("configuration root must be a mapping")
        raw = loaded
    _check_keys("top-level", raw, {"paths", "thresholds", "sampling", "endpoint", "windows"})

    def section(name: str, cls):
        data = raw.get(name) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{name} section must be a mapping")
        _check_keys(name, data, {f.name for f in cls.__dataclass_fields__.values()})
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"bad {name} section: {exc}") from exc

    paths = section("paths", PathsConfig)
    thresholds = section("thresholds", ThresholdsConfig)
    sampling = section("sampling", SamplingConfig)
    endpoint = section("endpoint", EndpointConfig)

    windows: dict[str, AnalysisWindow] = {}
    for raw_window in raw.get("windows") or []:
        w = _parse_window(raw_window)
        if w.label in windows:
            raise ConfigError(f"duplicate window label {w.label!r}")
        windows[w.label] = w

    if env.get(ENV_ENDPOINT_URL):
        endpoint.url = env[ENV_ENDPOINT_URL]
        endpoint.mock = False
    if env.get(ENV_ENDPOINT_TOKEN):
        endpoint.token = env[ENV_ENDPOINT_TOKEN]
    return PipelineConfig(
        paths=paths, thresholds=thresholds, sampling=sampling, endpoint=endpoint, windows=windows
    )
