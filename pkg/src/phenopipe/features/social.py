"""Communication logs: app calls/messages and SIM calls/SMS."""

from __future__ import annotations

import numpy as np
import pandas as pd

from .common import Summary, day_keys, finalize_daily

LONG_CALL_S = 60

CALL_COLUMNS = ["daily_n_incoming", "daily_n_outgoing", "daily_n_missed", "daily_total_duration_s",
                "daily_n_people_talked", "daily_n_long_calls"]
MSG_COLUMNS = ["daily_n_received", "daily_n_sent", "daily_len_received", "daily_len_sent",
               "daily_n_contacts_only_received", "daily_n_contacts_both", "daily_n_contacts_only_sent",
               "daily_n_contacts", "daily_n_media"]


def summarize_calls_daily(df: pd.DataFrame) -> Summary:
    """Call counts per direction, talk time and distinct people talked to (duration > 0)."""
    if df.empty:
        return Summary(daily=finalize_daily(pd.DataFrame(columns=CALL_COLUMNS)), counts=frozenset(CALL_COLUMNS))
    dk = day_keys(df)
    direction = df["direction"].to_numpy()
    dur = df["duration_s"].to_numpy(dtype=float)
    f = pd.DataFrame({
        "daily_n_incoming": (direction == "incoming").astype(float),
        "daily_n_outgoing": (direction == "outgoing").astype(float),
        "daily_n_missed": (direction == "missed").astype(float),
        "daily_total_duration_s": dur,
        "daily_n_long_calls": (dur > LONG_CALL_S).astype(float),
    })
    daily = f.groupby(dk).sum()
    talked = dur > 0
    people = pd.Series(df["contact"].to_numpy()[talked]).groupby(dk[talked]).nunique()
    daily["daily_n_people_talked"] = people.reindex(daily.index).fillna(0).astype(float)
    return Summary(daily=finalize_daily(daily[CALL_COLUMNS]), counts=frozenset(CALL_COLUMNS))


# SIM call log and app call log share definitions
summarize_sociability_calls_daily = summarize_calls_daily
summarize_calllog_daily = summarize_calls_daily


def summarize_msgs_daily(df: pd.DataFrame) -> Summary:
    """Message counts and lengths per direction, and contacts split by exchange pattern."""
    if df.empty:
        return Summary(daily=finalize_daily(pd.DataFrame(columns=MSG_COLUMNS)), counts=frozenset(MSG_COLUMNS))
    dk = day_keys(df)
    direction = df["direction"].to_numpy()
    length = df["length"].to_numpy(dtype=float)
    rec = direction == "incoming"
    sent = direction == "outgoing"
    media = df["type"].to_numpy() == "media" if "type" in df else np.zeros(len(df), dtype=bool)
    f = pd.DataFrame({
        "daily_n_received": rec.astype(float),
        "daily_n_sent": sent.astype(float),
        "daily_len_received": np.where(rec, length, 0.0),
        "daily_len_sent": np.where(sent, length, 0.0),
        "daily_n_media": media.astype(float),
    })
    daily = f.groupby(dk).sum()
    # per (day, contact): did we see a received / sent message
    pc = pd.DataFrame({"day": dk, "contact": df["contact"].to_numpy(), "r": rec, "s": sent})
    pc = pc[rec | sent].groupby(["day", "contact"])[["r", "s"]].any()
    r, s = pc["r"].to_numpy(), pc["s"].to_numpy()
    days = pc.index.get_level_values(0).to_numpy()
    for name, m in (("daily_n_contacts_only_received", r & ~s), ("daily_n_contacts_both", r & s),
                    ("daily_n_contacts_only_sent", s & ~r), ("daily_n_contacts", r | s)):
        daily[name] = pd.Series(m.astype(float)).groupby(days).sum().reindex(daily.index).fillna(0.0)
    return Summary(daily=finalize_daily(daily[MSG_COLUMNS]), counts=frozenset(MSG_COLUMNS))


summarize_sociability_msgs_daily = summarize_msgs_daily


def summarize_sms_daily(df: pd.DataFrame) -> Summary:
    s = summarize_msgs_daily(df)
    s.daily = s.daily.drop(columns=["daily_n_contacts", "daily_n_media"])
    return Summary(daily=s.daily, counts=s.counts - {"daily_n_contacts", "daily_n_media"})
