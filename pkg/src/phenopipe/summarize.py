"""Dispatch from raw feature kinds to family summaries for one participant."""

from __future__ import annotations

import pandas as pd

from .config import StudyConfig
from .features import phone, social, wearable
from .features.common import Summary
from .mobility import MOBILITY_FAMILY, summarize_gps
from .schemas import FeatureKind

FAMILY = {k: k.value for k in FeatureKind}
FAMILY[FeatureKind.gps] = MOBILITY_FAMILY


def summarize_participant(tables: dict[FeatureKind, pd.DataFrame], cfg: StudyConfig | None = None,
                          mapping=None) -> dict[str, Summary]:
    """All family summaries from stage-4 tables (missing kinds are skipped)."""
    cfg = cfg or StudyConfig()
    fc = cfg.features
    K = FeatureKind
    out: dict[str, Summary] = {}

    def has(k):
        return k in tables and not tables[k].empty

    if has(K.accel):
        out["accel"] = phone.summarize_accel_hourly(tables[K.accel], fc.accel_burst_gap_s)
    if has(K.accessibilityLog):
        out["accessibilityLog"] = phone.summarize_accessibility_hourly(tables[K.accessibilityLog])
    if has(K.callLog):
        out["callLog"] = social.summarize_calllog_daily(tables[K.callLog])
    if has(K.gps):
        out[MOBILITY_FAMILY] = summarize_gps(tables[K.gps], cfg.mobility, cfg.gps_ref_lat)
    if has(K.heart):
        out["heart"] = wearable.summarize_heart(tables[K.heart], fc.heart_pair_max_s)
    if has(K.light):
        out["light"] = phone.summarize_light(tables[K.light])
    if has(K.powerState):
        out["powerState"] = phone.summarize_power(tables[K.powerState])
    if has(K.sleep):
        out["sleep"] = wearable.summarize_sleep_daily(tables[K.sleep], fc.sleep_bridge_s, fc.awake_long_s)
    if has(K.sociabilityCallLog):
        out["sociabilityCallLog"] = social.summarize_sociability_calls_daily(tables[K.sociabilityCallLog])
    if has(K.sociabilityLog):
        out["sociabilityLog"] = social.summarize_sociability_msgs_daily(tables[K.sociabilityLog])
    if has(K.steps):
        out["steps"] = wearable.summarize_steps(tables[K.steps], tables.get(K.heart), fc.walk_min_steps,
                                                fc.walk_min_minutes)
    if has(K.tapsLog):
        out["tapsLog"] = phone.summarize_taps(tables[K.tapsLog], tables.get(K.powerState), mapping)
    if has(K.textsLog):
        out["textsLog"] = social.summarize_sms_daily(tables[K.textsLog])
    return out
