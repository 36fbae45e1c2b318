"""Smartphone sensor families: accelerometer, accessibility, ambient light, power state, taps."""

from __future__ import annotations

import numpy as np
import pandas as pd

from ..schemas import KEYBOARD_TOKENS, MS_PER_DAY, MS_PER_HOUR
from .apps import APP_GROUPS, AppGroup, classify_many
from .common import (Summary, expand_hourly, finalize_daily, group_stats, hour_keys, ordered,
                     pair_mask, top_half_mean)

SPREAD = {"max": "max", "min": "min", "std": "std", "mean": "mean", "median": "median"}


def _spread(prefix: str, which=("max", "min", "std", "mean", "median")) -> dict[str, str]:
    return {f"{prefix}_{s}": s for s in which}


# --- accelerometer -----------------------------------------------------------

def summarize_accel_hourly(df: pd.DataFrame, gap_s: float = 2.0) -> Summary:
    """Magnitude statistics and the max per-axis rate of change inside bursts."""
    df = ordered(df)
    if df.empty:
        return Summary(hourly=expand_hourly(pd.DataFrame(), []))
    xyz = df[["x", "y", "z"]].to_numpy(dtype=float)
    mag = np.sqrt((xyz ** 2).sum(axis=1))
    hk = hour_keys(df)
    stats = group_stats(hk, mag, _spread("hourly_L", ("max", "min", "std", "mean")))
    ok, dt = pair_mask(df["timestamp"].to_numpy(), hk, gap_s)
    if ok.any():
        rate = np.abs(np.diff(xyz, axis=0)[ok]).max(axis=1) / dt[ok]
        stats["hourly_ddt_max"] = group_stats(hk[1:][ok], rate, {"v": "max"})["v"]
    else:
        stats["hourly_ddt_max"] = np.nan
    return Summary(hourly=expand_hourly(stats, np.unique(hk // 24)))


# --- accessibility -----------------------------------------------------------

ACCESS_COUNTS = frozenset({"hourly_n_taps", "hourly_n_keyboard", "hourly_n_delete"})


def summarize_accessibility_hourly(df: pd.DataFrame) -> Summary:
    if df.empty:
        return Summary(hourly=expand_hourly(pd.DataFrame(), []), counts=ACCESS_COUNTS)
    hk = hour_keys(df)
    tok = df["token"].to_numpy()
    kb = np.isin(tok, list(KEYBOARD_TOKENS))
    dl = tok == "DELETE"
    g = pd.DataFrame({"hourly_n_taps": 1, "hourly_n_keyboard": kb.astype(int), "hourly_n_delete": dl.astype(int)})
    stats = g.groupby(hk).sum()
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = stats["hourly_n_delete"] / stats["hourly_n_keyboard"].where(stats["hourly_n_keyboard"] > 0)
    stats["hourly_delete_ratio"] = ratio
    return Summary(hourly=expand_hourly(stats.astype(float), np.unique(hk // 24), ACCESS_COUNTS),
                   counts=ACCESS_COUNTS)


# --- ambient light -----------------------------------------------------------

def summarize_light(df: pd.DataFrame) -> Summary:
    if df.empty:
        return Summary(hourly=expand_hourly(pd.DataFrame(), []), daily=finalize_daily(pd.DataFrame()))
    lux = df["lux"].to_numpy(dtype=float)
    ll = np.log1p(lux)
    hk = hour_keys(df)
    dk = hk // 24
    hourly = group_stats(hk, ll, {"hourly_max_log1p_lux": "max", "hourly_mean_log1p_lux": "mean",
                                  "hourly_min_log1p_lux": "min"})
    hourly["hourly_50high"] = top_half_mean(hk, lux)
    daily = group_stats(dk, ll, {"daily_max_log1p_lux": "max", "daily_mean_log1p_lux": "mean"})
    daily["daily_50high"] = top_half_mean(dk, lux)
    return Summary(hourly=expand_hourly(hourly, np.unique(dk)), daily=finalize_daily(daily))


# --- power state -------------------------------------------------------------

POWER_COUNTED = ("screen_on", "screen_off", "power_off")
POWER_COUNTS = frozenset({"hourly_screen_on_secs", "hourly_n_power_events", "hourly_n_screen_on"})


def screen_sessions(df: pd.DataFrame) -> tuple[np.ndarray, np.ndarray]:
    """Screen-on intervals ``[start, end)`` in epoch ms.

    A session opens on ``screen_on`` and closes on the next ``screen_off`` or
    ``power_off``; repeated ``screen_on`` while on keeps the first start and an
    unmatched ``screen_off`` is ignored. A session still open after the last
    event is closed at the end of its local day.
    """
    df = ordered(df)
    starts, ends = [], []
    open_at = None
    ts = df["timestamp"].to_numpy()
    ev = df["event"].to_numpy()
    tz = df["tz_offset"].to_numpy()
    for t, e in zip(ts, ev):
        if e == "screen_on":
            if open_at is None:
                open_at = t
        elif e in ("screen_off", "power_off"):
            if open_at is not None:
                starts.append(open_at)
                ends.append(t)
                open_at = None
    if open_at is not None:
        off = int(tz[-1]) * 60_000
        day_end = ((open_at + off) // MS_PER_DAY + 1) * MS_PER_DAY - off
        starts.append(open_at)
        ends.append(day_end)
    return np.asarray(starts, dtype="int64"), np.asarray(ends, dtype="int64")


def _split(starts, ends, off_ms: int, unit: int):
    """Cut intervals at local ``unit`` boundaries; returns (bucket, seconds, piece_start, piece_end)."""
    out_b, out_s, ps, pe = [], [], [], []
    for s, e in zip(starts.tolist(), ends.tolist()):
        ls, le = s + off_ms, e + off_ms
        b = ls // unit
        while ls < le:
            cut = min(le, (b + 1) * unit)
            out_b.append(b)
            out_s.append((cut - ls) / 1000.0)
            ps.append(ls)
            pe.append(cut)
            ls = cut
            b += 1
    return np.asarray(out_b, dtype="int64"), np.asarray(out_s, dtype=float), ps, pe


def summarize_power(df: pd.DataFrame) -> Summary:
    if df.empty:
        return Summary(hourly=expand_hourly(pd.DataFrame(), []), daily=finalize_daily(pd.DataFrame()),
                       counts=POWER_COUNTS)
    df = ordered(df)
    off = int(df["tz_offset"].iloc[-1]) * 60_000
    starts, ends = screen_sessions(df)
    hk = hour_keys(df)
    ev = df["event"].to_numpy()
    counted = np.isin(ev, POWER_COUNTED)

    hb, hsec, _, _ = _split(starts, ends, off, MS_PER_HOUR)
    hourly = pd.DataFrame({
        "hourly_screen_on_secs": pd.Series(hsec).groupby(hb).sum() if len(hb) else pd.Series(dtype=float),
    })
    hourly = hourly.join(pd.DataFrame({"hourly_n_power_events": counted.astype(float),
                                       "hourly_n_screen_on": (ev == "screen_on").astype(float)}).groupby(hk).sum(),
                         how="outer")

    db, dsec, _, _ = _split(starts, ends, off, MS_PER_DAY)
    sess = group_stats(db, dsec, {"daily_session_max": "max", "daily_session_min": "min",
                                  "daily_session_std": "std", "daily_session_mean": "mean"})
    dk = hk // 24
    counts = pd.DataFrame({"daily_n_power_down": (ev == "power_off").astype(float),
                           "daily_n_screen_on": (ev == "screen_on").astype(float)}).groupby(dk).sum()
    days = np.union1d(np.unique(dk), np.unique(db))
    daily = counts.reindex(days).fillna(0).join(sess, how="left")
    daily = daily[["daily_n_power_down", "daily_session_max", "daily_session_min", "daily_session_std",
                   "daily_session_mean", "daily_n_screen_on"]]
    return Summary(hourly=expand_hourly(hourly, days, POWER_COUNTS), daily=finalize_daily(daily),
                   counts=POWER_COUNTS)


# --- taps ----------------------------------------------------------------------

TAPS_COUNTS = frozenset({"hourly_n_taps"})
MESSENGER = AppGroup.social_messenger.value


def _session_index(ts: np.ndarray, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """Index of the screen-on session containing each timestamp, -1 if none."""
    if len(starts) == 0:
        return np.full(len(ts), -1, dtype="int64")
    idx = np.searchsorted(starts, ts, side="right") - 1
    inside = (idx >= 0) & (ts < ends[np.clip(idx, 0, None)])
    return np.where(inside, idx, -1)


def summarize_taps(df: pd.DataFrame, power: pd.DataFrame | None = None, mapping=None) -> Summary:
    """Tap counts per hour/app group and inter-tap durations inside screen-on sessions."""
    if df.empty:
        return Summary(hourly=expand_hourly(pd.DataFrame(), []), daily=finalize_daily(pd.DataFrame()),
                       counts=TAPS_COUNTS)
    df = ordered(df)
    if "app_group" in df:
        groups = df["app_group"].to_numpy()
    else:
        groups = np.asarray(classify_many(mapping, df["app"].tolist()))
    ts = df["timestamp"].to_numpy()
    hk = hour_keys(df)
    dk = hk // 24
    if power is not None and not power.empty:
        s, e = screen_sessions(power)
    else:
        s = e = np.zeros(0, dtype="int64")
    sid = _session_index(ts, s, e)
    same_sess = (sid[1:] == sid[:-1]) & (sid[1:] >= 0)

    ok_h, dt = pair_mask(ts, hk, allow_zero=True)
    ok_h &= same_sess
    hourly = group_stats(hk, np.ones(len(hk)), {"hourly_n_taps": "count"})
    hourly = hourly.join(group_stats(hk[1:][ok_h], dt[ok_h], _spread("hourly_intertap")), how="left")

    ok_d, _ = pair_mask(ts, dk, allow_zero=True)
    ok_d &= same_sess
    msg = groups == MESSENGER
    ok_m = ok_d & msg[1:] & msg[:-1]

    daily = pd.DataFrame(index=np.unique(dk))
    daily["daily_n_unique_apps"] = pd.Series(df["app"].to_numpy()).groupby(dk).nunique()
    for g in APP_GROUPS:
        daily[f"daily_n_taps_in_{g.slug}"] = pd.Series((groups == g.value).astype(float)).groupby(dk).sum()
    daily = daily.join(group_stats(dk[1:][ok_m], dt[ok_m], _spread("daily_messenger_intertap")), how="left")
    daily["daily_n_taps"] = pd.Series(np.ones(len(dk))).groupby(dk).sum()
    daily = daily.join(group_stats(dk[1:][ok_d], dt[ok_d], {"daily_intertap_mean": "mean"}), how="left")
    return Summary(hourly=expand_hourly(hourly, daily.index, TAPS_COUNTS), daily=finalize_daily(daily.astype(float)),
                   counts=TAPS_COUNTS)
