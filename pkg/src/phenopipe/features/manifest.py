"""Feature manifest: the ordered dimensions of the daily feature vector.

Hourly statistics contribute 24 columns each (``family.stat.hHH``), daily
statistics one (``family.stat``). The default manifest has 729 dimensions.
Where the per-family extraction rules list more or fewer statistics than the
family's target dimension count, statistics are added or left out here and
every such choice is recorded (see :func:`reconciliation_markdown`).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import pandas as pd

LISTED, ADDED, DROPPED = "listed", "added", "computed-not-selected"


@dataclass(frozen=True)
class Entry:
    family: str
    stat: str
    granularity: str  # "daily" | "hourly"
    origin: str = LISTED
    note: str = ""

    def columns(self) -> list[str]:
        if self.granularity == "daily":
            return [f"{self.family}.{self.stat}"]
        return [f"{self.family}.{self.stat}.h{h:02d}" for h in range(24)]


@dataclass(frozen=True)
class FamilySpec:
    family: str
    source: str
    target_daily: int
    target_hourly: int
    entries: tuple
    dropped: tuple = ()  # (stat, granularity, note)


class ManifestMismatch(KeyError):
    pass


def _d(family, *stats, origin=LISTED, note=""):
    return [Entry(family, s, "daily", origin, note) for s in stats]


def _h(family, *stats, origin=LISTED, note=""):
    return [Entry(family, s, "hourly", origin, note) for s in stats]


def _spread(prefix, which=("max", "min", "std", "mean", "median")):
    return [f"{prefix}_{w}" for w in which]


def default_families() -> list[FamilySpec]:
    from .apps import APP_GROUPS

    fams = []
    fams.append(FamilySpec("sleep", "wearable", 17, 0, tuple(
        _d("sleep", "daily_deep_hrs", "daily_light_hrs", "daily_rem_hrs", "daily_awake_hrs",
           "daily_n_awake_main", "daily_n_awake_long_main", "daily_ratio_deep", "daily_ratio_light",
           "daily_ratio_rem", "daily_ratio_awake", "daily_start_offset_hrs", "daily_end_offset_hrs",
           "daily_time_to_asleep_hrs", "daily_time_to_getup_hrs", "daily_efficiency")
        + _d("sleep", "daily_total_hrs", origin=ADDED, note="hours asleep (deep+light+rem) over all sleep in the window")
        + _d("sleep", "daily_mean_efficiency", origin=ADDED, note="mean efficiency over all gap-bridged sleep periods")
    )))
    fams.append(FamilySpec("steps", "wearable", 14, 4, tuple(
        _h("steps", "hourly_n_steps", "hourly_max_steps_min")
        + _h("steps", "hourly_n_mins_steps", origin=ADDED, note="minutes with steps > 0 in the hour")
        + _h("steps", "hourly_n_mins_wearing", origin=ADDED, note="minutes with at least one heart sample in the hour")
        + _d("steps", "daily_n_steps", "daily_n_mins_wearing", "daily_n_mins_steps", "daily_n_walks",
             "daily_walk_steps_max", "daily_walk_steps_mean", "daily_walk_mins_max", "daily_walk_mins_mean",
             "daily_walk_steps_per_min", "daily_max_consec_mins_3", "daily_max_consec_mins_30")
        + _d("steps", "daily_n_mins_walk", origin=ADDED, note="total minutes inside walks")
        + _d("steps", "daily_max_steps_min", origin=ADDED, note="max steps in any minute of the day")
        + _d("steps", "daily_n_mins_sedentary_wearing", origin=ADDED, note="worn minutes with zero steps")
    )))
    fams.append(FamilySpec("heart", "wearable", 12, 6, tuple(
        _h("heart", "hourly_HR_max", "hourly_HR_min", "hourly_HR_std", "hourly_HR_mean",
           "hourly_HRV_max", "hourly_HRV_std")
        + _d("heart", "daily_HR_max", "daily_HR_min", "daily_HR_std", "daily_HR_mean", "daily_HR_median",
             "daily_HRV_max", "daily_HRV_min", "daily_absHRV_mean", "daily_absHRV_std",
             "daily_HR_q25", "daily_HR_q12_5")
        + _d("heart", "daily_n_samples", origin=ADDED, note="heart samples in the day (x5 s = wearing time)")
    ), dropped=(("hourly_HRV_min", "hourly", "seven hourly statistics listed for six slots; HRV min is the "
                 "least informative next to HRV max/std and is kept in the stage-4 summary only"),)))
    from ..mobility import MOBILITY_FAMILY, MOBILITY_METRICS
    fams.append(FamilySpec(MOBILITY_FAMILY, "smartphone", 15, 0, tuple(_d(MOBILITY_FAMILY, *MOBILITY_METRICS))))
    fams.append(FamilySpec("accel", "smartphone", 0, 5, tuple(
        _h("accel", "hourly_L_max", "hourly_L_min", "hourly_L_std", "hourly_L_mean", "hourly_ddt_max")
    )))
    fams.append(FamilySpec("accessibilityLog", "smartphone", 0, 1, tuple(
        _h("accessibilityLog", "hourly_delete_ratio")
    ), dropped=tuple((s, "hourly", "one hourly slot; the DELETE ratio summarises the three counts")
                     for s in ("hourly_n_taps", "hourly_n_keyboard", "hourly_n_delete"))))
    fams.append(FamilySpec("callLog", "smartphone", 5, 0, tuple(
        _d("callLog", "daily_n_incoming", "daily_n_outgoing", "daily_n_missed", "daily_total_duration_s",
           "daily_n_people_talked")
    ), dropped=(("daily_n_long_calls", "daily", "auxiliary count of calls over 60 s for the clinician view"),)))
    fams.append(FamilySpec("light", "smartphone", 3, 2, tuple(
        _h("light", "hourly_max_log1p_lux", "hourly_mean_log1p_lux")
        + _d("light", "daily_max_log1p_lux", "daily_mean_log1p_lux", origin=ADDED,
             note="daily counterpart of the hourly log1p statistics")
        + _d("light", "daily_50high", origin=ADDED, note="mean of the top half of the day's lux values")
    ), dropped=(("hourly_min_log1p_lux", "hourly", "four hourly statistics listed for two slots"),
                ("hourly_50high", "hourly", "four hourly statistics listed for two slots; kept as a daily value"))))
    fams.append(FamilySpec("powerState", "smartphone", 6, 2, tuple(
        _h("powerState", "hourly_screen_on_secs", "hourly_n_power_events")
        + _d("powerState", "daily_n_power_down", "daily_session_max", "daily_session_min", "daily_session_std",
             "daily_session_mean")
        + _d("powerState", "daily_n_screen_on", origin=ADDED, note="screen-on events in the day")
    ), dropped=(("hourly_n_screen_on", "hourly", "hourly screen-on events; covered by hourly_n_power_events"),)))
    fams.append(FamilySpec("sociabilityCallLog", "smartphone", 4, 0, tuple(
        _d("sociabilityCallLog", "daily_n_incoming", "daily_n_outgoing", "daily_total_duration_s",
           "daily_n_people_talked")
    ), dropped=(("daily_n_missed", "daily", "five daily statistics listed for four slots; missed app calls are rare"),
                ("daily_n_long_calls", "daily", "auxiliary count of calls over 60 s for the clinician view"))))
    fams.append(FamilySpec("sociabilityLog", "smartphone", 9, 0, tuple(
        _d("sociabilityLog", "daily_n_received", "daily_n_sent", "daily_len_received", "daily_len_sent",
           "daily_n_contacts_only_received", "daily_n_contacts_both", "daily_n_contacts_only_sent")
        + _d("sociabilityLog", "daily_n_contacts", origin=ADDED, note="distinct contacts messaged either way")
        + _d("sociabilityLog", "daily_n_media", origin=ADDED, note="messages of type media")
    )))
    fams.append(FamilySpec("tapsLog", "smartphone", 13, 6, tuple(
        _h("tapsLog", "hourly_n_taps", *_spread("hourly_intertap"))
        + _d("tapsLog", "daily_n_unique_apps")
        + _d("tapsLog", *[f"daily_n_taps_in_{g.slug}" for g in APP_GROUPS])
        + _d("tapsLog", *_spread("daily_messenger_intertap"))
    ), dropped=(("daily_n_taps", "daily", "auxiliary daily total used by the anomaly scorer"),
                ("daily_intertap_mean", "daily", "auxiliary daily mean used by the anomaly scorer"))))
    fams.append(FamilySpec("textsLog", "smartphone", 7, 0, tuple(
        _d("textsLog", "daily_n_received", "daily_n_sent", "daily_len_received", "daily_len_sent",
           "daily_n_contacts_only_received", "daily_n_contacts_both", "daily_n_contacts_only_sent")
    )))
    return fams


class Manifest:
    def __init__(self, families: list[FamilySpec]):
        self.families = families
        self.entries: list[Entry] = [e for f in families for e in f.entries]
        cols = [c for e in self.entries for c in e.columns()]
        if len(set(cols)) != len(cols):
            raise ValueError("duplicate manifest column")
        self.columns = cols

    def __len__(self):
        return len(self.columns)

    def family_totals(self) -> dict[str, int]:
        out = {}
        for e in self.entries:
            out[e.family] = out.get(e.family, 0) + len(e.columns())
        return out

    def to_json(self) -> str:
        body = {
            "dimensions": len(self),
            "families": [{"family": f.family, "source": f.source, "daily": f.target_daily,
                          "hourly": f.target_hourly, "total": f.target_daily + 24 * f.target_hourly}
                         for f in self.families],
            "entries": [{"family": e.family, "stat": e.stat, "granularity": e.granularity,
                         "origin": e.origin, "note": e.note} for e in self.entries],
            "columns": self.columns,
        }
        return json.dumps(body, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Manifest":
        body = json.loads(text)
        fams: dict[str, list] = {}
        meta = {f["family"]: f for f in body["families"]}
        for e in body["entries"]:
            fams.setdefault(e["family"], []).append(Entry(e["family"], e["stat"], e["granularity"],
                                                          e.get("origin", LISTED), e.get("note", "")))
        return cls([FamilySpec(name, meta[name]["source"], meta[name]["daily"], meta[name]["hourly"], tuple(ents))
                    for name, ents in fams.items()])


def default_manifest() -> Manifest:
    return Manifest(default_families())


def reconciliation_markdown(manifest: Manifest) -> str:
    lines = ["# Feature manifest reconciliation", "",
             f"Total dimensions: {len(manifest)}", "",
             "| family | source | daily | hourly | dimensions |", "|---|---|---|---|---|"]
    totals = manifest.family_totals()
    for f in manifest.families:
        lines.append(f"| {f.family} | {f.source} | {f.target_daily} | {f.target_hourly} | {totals.get(f.family, 0)} |")
    lines.append("")
    for f in manifest.families:
        added = [e for e in f.entries if e.origin == ADDED]
        if not added and not f.dropped:
            continue
        listed = sum(1 for e in f.entries if e.origin == LISTED)
        lines += [f"## {f.family}", "",
                  f"Listed statistics kept: {listed}; added: {len(added)}; computed but not selected: {len(f.dropped)}.",
                  ""]
        for e in added:
            lines.append(f"- added `{e.family}.{e.stat}` ({e.granularity}): {e.note}")
        for stat, gran, note in f.dropped:
            lines.append(f"- not selected `{f.family}.{stat}` ({gran}): {note}")
        lines.append("")
    return "\n".join(lines)


def combine_daily(manifest: Manifest, days, hourly: dict[str, pd.DataFrame],
                  daily: dict[str, pd.DataFrame]) -> pd.DataFrame:
    """Assemble one row per day in ``days`` with the manifest's columns.

    ``hourly``/``daily`` map family -> stage-4 frames (``day``[, ``hour``], stats).
    Anything absent becomes NaN. Unknown statistics in the manifest raise
    :class:`ManifestMismatch`.
    """
    days = np.asarray(list(days), dtype="int64")
    out = np.full((len(days), len(manifest)), np.nan)
    pos = {d: i for i, d in enumerate(days.tolist())}
    col = 0
    for e in manifest.entries:
        width = 1 if e.granularity == "daily" else 24
        src = (daily if e.granularity == "daily" else hourly).get(e.family)
        if src is not None and len(src):
            if e.stat not in src.columns:
                raise ManifestMismatch(f"{e.family}.{e.stat}")
            rows = np.array([pos.get(int(d), -1) for d in src["day"].to_numpy()])
            ok = rows >= 0
            vals = src[e.stat].to_numpy(dtype=float)
            if e.granularity == "daily":
                out[rows[ok], col] = vals[ok]
            else:
                hrs = src["hour"].to_numpy(dtype="int64")
                out[rows[ok], col + hrs[ok]] = vals[ok]
        col += width
    return pd.DataFrame(out, columns=manifest.columns)
