"""App grouper: package name -> one of seven usage groups."""

from __future__ import annotations

import csv
import io
from enum import Enum
from functools import lru_cache
from importlib import resources


class AppGroup(str, Enum):
    social_messenger = "social messenger"
    social_media = "social media"
    entertainment = "entertainment"
    map_navigation = "map navigation"
    utility_tools = "utility tools"
    games = "games"
    android_system = "android system"

    @property
    def slug(self) -> str:
        return self.value.replace(" ", "_")


APP_GROUPS = tuple(AppGroup)
SYSTEM_PREFIXES = ("com.android.", "com.samsung.", "android.")


@lru_cache(maxsize=None)
def default_mapping() -> dict[str, AppGroup]:
    text = resources.files("phenopipe").joinpath("data/app_groups.csv").read_text()
    return load_mapping(text)


def load_mapping(text: str) -> dict[str, AppGroup]:
    out = {}
    for row in csv.DictReader(io.StringIO(text)):
        out[row["package"].strip()] = AppGroup(row["group"].strip())
    return out


def classify_app(mapping: dict[str, AppGroup] | None, package: str) -> AppGroup:
    """Mapped group if known; everything else is treated as a built-in app."""
    if mapping is None:
        mapping = default_mapping()
    group = mapping.get(package)
    if group is not None:
        return group
    # unmapped vendor packages and unknown apps alike fall into the system bucket
    if package.startswith(SYSTEM_PREFIXES):
        return AppGroup.android_system
    return AppGroup.android_system


def classify_many(mapping, packages) -> list[str]:
    cache: dict[str, str] = {}
    out = []
    for p in packages:
        g = cache.get(p)
        if g is None:
            g = cache[p] = classify_app(mapping, p).value
        out.append(g)
    return out
