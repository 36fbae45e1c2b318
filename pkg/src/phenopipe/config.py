"""Study configuration (``<root>/study.json``).

All tunable thresholds live here. Command-line flags are merged on top of the
file, flags winning.
"""

from __future__ import annotations

import json
from dataclasses import MISSING, asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

CONFIG_NAME = "study.json"


@dataclass
class MobilityConfig:
    pause_radius_m: float = 50.0
    pause_min_s: float = 300.0
    home_radius_m: float = 100.0
    sigloc_merge_m: float = 200.0
    sigloc_min_dwell_s: float = 900.0
    # a fix is taken to describe the position for this long afterwards
    hold_s: float = 900.0
    night_start_h: int = 21
    night_end_h: int = 6


@dataclass
class FeatureConfig:
    accel_burst_gap_s: float = 2.0
    heart_pair_max_s: float = 15.0
    walk_min_steps: int = 10
    walk_min_minutes: int = 3
    sleep_bridge_s: float = 1800.0
    awake_long_s: float = 180.0


@dataclass
class AnomalyConfig:
    model: str = "ar"  # "ar" or "gp"
    ar_order: int = 1
    season: int = 7
    min_history: int = 21
    gp_grid_search: bool = False


@dataclass
class CompareConfig:
    pre: tuple[int, int] = (-45, -3)
    post: tuple[int, int] = (3, 45)
    completeness: float = 0.5


@dataclass
class DashboardConfig:
    orange_h: float = 24.0
    red_h: float = 96.0
    wear_target_h: float = 22.0
    heart_interval_s: float = 5.0
    completion_days: int = 90
    severity_mild: float = 0.8
    severity_high: float = 0.9
    efficiency_good: float = 0.9
    efficiency_fair: float = 0.8


@dataclass
class StudyConfig:
    study: str = "study"
    tz_offset_min: int = 480
    gps_ref_lat: float = 1.35
    compress: bool = True
    compress_level: int = 6
    api_base: str = "http://127.0.0.1:8765"
    mobility: MobilityConfig = field(default_factory=MobilityConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    anomaly: AnomalyConfig = field(default_factory=AnomalyConfig)
    compare: CompareConfig = field(default_factory=CompareConfig)
    dashboards: DashboardConfig = field(default_factory=DashboardConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "StudyConfig":
        return _build(cls, data)

    def merged(self, overrides: dict) -> "StudyConfig":
        """Return a copy with dotted-key overrides applied (``{"anomaly.model": "gp"}``)."""
        data = self.to_dict()
        for key, value in overrides.items():
            if value is None:
                continue
            node = data
            *parents, leaf = key.split(".")
            for p in parents:
                node = node[p]
            if leaf not in node:
                raise KeyError(f"unknown config key {key}")
            node[leaf] = value
        return StudyConfig.from_dict(data)


def _build(cls, data: dict):
    kwargs: dict[str, Any] = {}
    known = {f.name: f for f in fields(cls)}
    for key, value in data.items():
        if key not in known:
            raise KeyError(f"unknown config key {key} in {cls.__name__}")
        f = known[key]
        if f.default_factory is not MISSING and is_dataclass(f.default_factory):
            kwargs[key] = value if is_dataclass(value) else _build(f.default_factory, value)
        elif isinstance(f.default, tuple):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def load_config(root: Path | str) -> StudyConfig:
    path = Path(root) / CONFIG_NAME
    if not path.exists():
        return StudyConfig()
    return StudyConfig.from_dict(json.loads(path.read_text()))


def save_config(root: Path | str, cfg: StudyConfig) -> Path:
    path = Path(root) / CONFIG_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return path
