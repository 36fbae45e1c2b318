"""Wrist-wearable families: heart rate, steps, sleep."""

from __future__ import annotations

import numpy as np
import pandas as pd

from ..schemas import MS_PER_DAY, local_ms
from .common import Summary, expand_hourly, finalize_daily, group_stats, hour_keys, ordered, pair_mask, runs

MINUTE_MS = 60_000


# --- heart rate ---------------------------------------------------------------

def summarize_heart(df: pd.DataFrame, pair_max_s: float = 15.0) -> Summary:
    """HR spread per hour/day; HRV = dHR/dt over consecutive samples at most ``pair_max_s`` apart."""
    if df.empty:
        return Summary(hourly=expand_hourly(pd.DataFrame(), []), daily=finalize_daily(pd.DataFrame()))
    df = ordered(df)
    hr = df["bpm"].to_numpy(dtype=float)
    ts = df["timestamp"].to_numpy()
    hk = hour_keys(df)
    dk = hk // 24

    hourly = group_stats(hk, hr, {"hourly_HR_max": "max", "hourly_HR_min": "min",
                                  "hourly_HR_std": "std", "hourly_HR_mean": "mean"})
    ok, dt = pair_mask(ts, hk, pair_max_s)
    hrv = np.diff(hr) / np.where(dt > 0, dt, 1.0)
    hourly = hourly.join(group_stats(hk[1:][ok], hrv[ok], {"hourly_HRV_max": "max", "hourly_HRV_min": "min",
                                                           "hourly_HRV_std": "std"}), how="left")

    daily = group_stats(dk, hr, {"daily_HR_max": "max", "daily_HR_min": "min", "daily_HR_std": "std",
                                 "daily_HR_mean": "mean", "daily_HR_median": "median",
                                 "daily_HR_q25": "q0.25", "daily_HR_q12_5": "q0.125", "daily_n_samples": "count"})
    okd, _ = pair_mask(ts, dk, pair_max_s)
    v = hrv[okd]
    k = dk[1:][okd]
    daily = daily.join(group_stats(k, v, {"daily_HRV_max": "max", "daily_HRV_min": "min"}), how="left")
    daily = daily.join(group_stats(k, np.abs(v), {"daily_absHRV_mean": "mean", "daily_absHRV_std": "std"}),
                       how="left")
    return Summary(hourly=expand_hourly(hourly, daily.index), daily=finalize_daily(daily),
                   counts=frozenset({"daily_n_samples"}))


def worn_minutes(heart: pd.DataFrame | None) -> np.ndarray:
    """Sorted unique absolute local minute indices that contain at least one heart sample."""
    if heart is None or heart.empty:
        return np.zeros(0, dtype="int64")
    return np.unique(local_ms(heart) // MINUTE_MS)


# --- steps ---------------------------------------------------------------------

STEPS_COUNTS = frozenset({"hourly_n_steps", "hourly_n_mins_steps", "hourly_n_mins_wearing"})


def minute_matrix(df: pd.DataFrame) -> tuple[np.ndarray, np.ndarray]:
    """(days, M) where ``M[i, m]`` is the step count of minute m on days[i]; duplicates are summed."""
    mins = local_ms(df) // MINUTE_MS
    days = np.unique(mins // 1440)
    M = np.zeros((len(days), 1440), dtype="int64")
    row = np.searchsorted(days, mins // 1440)
    np.add.at(M, (row, mins % 1440), df["steps"].to_numpy(dtype="int64"))
    return days, M


def walk_runs(M: np.ndarray, min_steps: int = 10, min_minutes: int = 3):
    """Walks in each row of a minute matrix.

    Returns ``(row, start, length, steps)`` arrays, one entry per walk: a
    maximal run of minutes each with at least ``min_steps`` steps, kept when it
    lasts ``min_minutes`` or more.
    """
    n, w = M.shape
    padded = np.zeros((n, w + 1), dtype=bool)
    padded[:, :w] = M >= min_steps
    starts, lengths = runs(padded.ravel())
    keep = lengths >= min_minutes
    starts, lengths = starts[keep], lengths[keep]
    flat = np.zeros((n, w + 1), dtype="int64")
    flat[:, :w] = M
    c = np.concatenate(([0], np.cumsum(flat.ravel())))
    steps = c[starts + lengths] - c[starts]
    return starts // (w + 1), starts % (w + 1), lengths, steps


def max_run(M: np.ndarray, threshold: int) -> np.ndarray:
    """Per row, the longest run of minutes with more than ``threshold`` steps."""
    n, w = M.shape
    padded = np.zeros((n, w + 1), dtype=bool)
    padded[:, :w] = M > threshold
    starts, lengths = runs(padded.ravel())
    out = np.zeros(n)
    np.maximum.at(out, starts // (w + 1), lengths)
    return out


def summarize_steps(df: pd.DataFrame, heart: pd.DataFrame | None = None, min_steps: int = 10,
                    min_minutes: int = 3) -> Summary:
    if df.empty:
        return Summary(hourly=expand_hourly(pd.DataFrame(), []), daily=finalize_daily(pd.DataFrame()),
                       counts=STEPS_COUNTS)
    days, M = minute_matrix(df)
    n = len(days)
    worn = np.zeros((n, 1440), dtype=bool)
    wm = worn_minutes(heart)
    if len(wm):
        row = np.searchsorted(days, wm // 1440)
        hit = (row < n) & (days[np.clip(row, 0, n - 1)] == wm // 1440)
        worn[row[hit], wm[hit] % 1440] = True

    H = M.reshape(n, 24, 60)
    hkeys = (days[:, None] * 24 + np.arange(24)).ravel()
    hourly = pd.DataFrame({
        "hourly_n_steps": H.sum(axis=2).ravel().astype(float),
        "hourly_max_steps_min": H.max(axis=2).ravel().astype(float),
        "hourly_n_mins_steps": (H > 0).sum(axis=2).ravel().astype(float),
        "hourly_n_mins_wearing": worn.reshape(n, 24, 60).sum(axis=2).ravel().astype(float),
    }, index=hkeys)
    # a minute that never appears in the input has no step reading for its hour
    seen = np.zeros((n, 1440), dtype=bool)
    mins = local_ms(df) // MINUTE_MS
    seen[np.searchsorted(days, mins // 1440), mins % 1440] = True
    hourly.loc[~seen.reshape(n, 24, 60).any(axis=2).ravel(), "hourly_max_steps_min"] = np.nan

    wr, _, wl, ws = walk_runs(M, min_steps, min_minutes)
    walks = pd.DataFrame({"row": wr, "len": wl.astype(float), "steps": ws.astype(float)})
    g = walks.groupby("row")
    daily = pd.DataFrame(index=np.arange(n))
    daily["daily_n_steps"] = M.sum(axis=1).astype(float)
    daily["daily_n_mins_wearing"] = worn.sum(axis=1).astype(float)
    daily["daily_n_mins_steps"] = (M > 0).sum(axis=1).astype(float)
    daily["daily_n_walks"] = g.size().reindex(daily.index).fillna(0)
    daily["daily_walk_steps_max"] = g["steps"].max()
    daily["daily_walk_steps_mean"] = g["steps"].mean()
    daily["daily_walk_mins_max"] = g["len"].max()
    daily["daily_walk_mins_mean"] = g["len"].mean()
    daily["daily_walk_steps_per_min"] = g["steps"].sum() / g["len"].sum()
    daily["daily_max_consec_mins_3"] = max_run(M, 3)
    daily["daily_max_consec_mins_30"] = max_run(M, 30)
    daily["daily_n_mins_walk"] = g["len"].sum().reindex(daily.index).fillna(0)
    daily["daily_max_steps_min"] = M.max(axis=1).astype(float)
    daily["daily_n_mins_sedentary_wearing"] = (worn & (M == 0)).sum(axis=1).astype(float)
    daily.index = days
    return Summary(hourly=expand_hourly(hourly, days, STEPS_COUNTS), daily=finalize_daily(daily),
                   counts=STEPS_COUNTS)


# --- sleep ---------------------------------------------------------------------

WINDOW_START_MS = (15 * 60 + 15) * MINUTE_MS  # 15:15
BED_REF_MS = (23 * 60 + 15) * MINUTE_MS  # 23:15 on the evening before
WAKE_REF_MS = (7 * 60 + 15) * MINUTE_MS  # 07:15 on the labelled day
SLEEP_COLUMNS = [
    "daily_deep_hrs", "daily_light_hrs", "daily_rem_hrs", "daily_awake_hrs",
    "daily_n_awake_main", "daily_n_awake_long_main",
    "daily_ratio_deep", "daily_ratio_light", "daily_ratio_rem", "daily_ratio_awake",
    "daily_start_offset_hrs", "daily_end_offset_hrs",
    "daily_time_to_asleep_hrs", "daily_time_to_getup_hrs", "daily_efficiency",
    "daily_total_hrs", "daily_mean_efficiency",
]


def sleep_periods(start: np.ndarray, end: np.ndarray, bridge_ms: int) -> list[tuple[int, int]]:
    """Group time-ordered segments into periods; a gap of at most ``bridge_ms`` joins them.

    Returns ``[(first, last_exclusive), ...]`` index ranges.
    """
    out = []
    if len(start) == 0:
        return out
    first = 0
    reach = end[0]
    for i in range(1, len(start)):
        if start[i] - reach > bridge_ms:
            out.append((first, i))
            first = i
        reach = max(reach, end[i])
    out.append((first, len(start)))
    return out


def _edge_awake(stages, durs) -> float:
    total = 0.0
    for s, d in zip(stages, durs):
        if s != "awake":
            break
        total += d
    return total


def sleep_window_stats(local_start: np.ndarray, dur_s: np.ndarray, stage: np.ndarray, day: int,
                       bridge_s: float = 1800.0, awake_long_s: float = 180.0) -> dict:
    """Statistics for one 15:15-to-15:15 window labelled by the day it ends on."""
    order = np.lexsort((stage, dur_s, local_start))
    ls, du, st = local_start[order], dur_s[order].astype(float), stage[order]
    le = ls + (du * 1000).astype("int64")
    out = {}
    for name in ("deep", "light", "rem", "awake"):
        out[f"daily_{name}_hrs"] = du[st == name].sum() / 3600.0
    periods = sleep_periods(ls, le, int(bridge_s * 1000))
    spans = [le[a:b].max() - ls[a] for a, b in periods]
    a, b = periods[int(np.argmax(spans))]
    mst, mdu = st[a:b], du[a:b]
    total = mdu.sum()
    awake = mdu[mst == "awake"]
    out["daily_n_awake_main"] = float(len(awake))
    out["daily_n_awake_long_main"] = float((awake >= awake_long_s).sum())
    for name in ("deep", "light", "rem", "awake"):
        out[f"daily_ratio_{name}"] = mdu[mst == name].sum() / total
    midnight = day * MS_PER_DAY
    out["daily_start_offset_hrs"] = (ls[a] - (midnight - MS_PER_DAY + BED_REF_MS)) / 3.6e6
    out["daily_end_offset_hrs"] = (le[a:b].max() - (midnight + WAKE_REF_MS)) / 3.6e6
    out["daily_time_to_asleep_hrs"] = _edge_awake(mst, mdu) / 3600.0
    out["daily_time_to_getup_hrs"] = _edge_awake(mst[::-1], mdu[::-1]) / 3600.0
    out["daily_efficiency"] = (total - awake.sum()) / total
    out["daily_total_hrs"] = du[st != "awake"].sum() / 3600.0
    effs = []
    for p, q in periods:
        t = du[p:q].sum()
        effs.append((t - du[p:q][st[p:q] == "awake"].sum()) / t)
    out["daily_mean_efficiency"] = float(np.mean(effs))
    # local wake time of the main sleep
    out["_main_end_local_ms"] = int(le[a:b].max())
    return out


def sleep_day(local_ms_start):
    """Label of the 15:15 window a local start time falls in (the day the window ends on)."""
    return (np.asarray(local_ms_start) - WINDOW_START_MS) // MS_PER_DAY + 1


def summarize_sleep_daily(df: pd.DataFrame, bridge_s: float = 1800.0, awake_long_s: float = 180.0) -> Summary:
    if df.empty:
        return Summary(daily=finalize_daily(pd.DataFrame(columns=SLEEP_COLUMNS)))
    loc = local_ms(df)
    lab = sleep_day(loc)
    dur = df["duration_s"].to_numpy()
    st = df["stage"].to_numpy()
    rows = {}
    order = np.argsort(lab, kind="stable")
    bounds = np.flatnonzero(np.diff(lab[order])) + 1
    for idx in np.split(order, bounds):
        d = int(lab[idx[0]])
        rows[d] = sleep_window_stats(loc[idx], dur[idx], st[idx], d, bridge_s, awake_long_s)
    daily = pd.DataFrame.from_dict(rows, orient="index").sort_index()
    daily = daily.drop(columns="_main_end_local_ms")[SLEEP_COLUMNS]
    return Summary(daily=finalize_daily(daily), counts=frozenset({"daily_n_awake_main", "daily_n_awake_long_main"}))
