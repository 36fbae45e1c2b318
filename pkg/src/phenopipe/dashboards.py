"""Static single-file HTML dashboards: data collection, data completion,
clinician overview and anomaly scores.

Every renderer is a pure function of its inputs so reruns are byte-identical.
"""

from __future__ import annotations

import html
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd
import pyarrow.csv as pacsv

from .anomaly import SCORE_COLUMNS, SCORES_FILE, read_scores
from .config import DashboardConfig
from .schemas import MS_PER_DAY, MS_PER_HOUR, PHONE_KINDS, WEARABLE_KINDS, FeatureKind, date_to_day, day_to_date
from .store import Participant, Registry, StudyLayout, load_metadata

K = FeatureKind
SOCIAL_KINDS = ("callLog", "sociabilityCallLog", "sociabilityLog", "textsLog")
AGE_FIELDS = ["location", "sociability", "taps", "phone_upload", "fitbit_upload", "sleep"]
AGE_LABELS = {
    "location": "Location (h ago)",
    "sociability": "Sociability (h ago)",
    "taps": "Taps in Apps (h ago)",
    "phone_upload": "Last Phone Upload (h ago)",
    "fitbit_upload": "Last Fitbit Upload (h ago)",
    "sleep": "Sleep (h since wake)",
}
ISSUE_GROUPS = {
    "Phone Sync Issues": ("location", "sociability", "taps", "phone_upload"),
    "Fitbit Sync Issues": ("fitbit_upload",),
    "Sleep Data Issues": ("sleep",),
}
# mean radius of gyration buckets (km) for the mobility bar color
ROG_BUCKETS_KM = (1.0, 5.0)

CSS = """
body{font-family:Helvetica,Arial,sans-serif;font-size:13px;margin:16px;color:#222}
table{border-collapse:collapse;margin-bottom:16px}
th,td{border:1px solid #bbb;padding:3px 6px;text-align:right}
th{background:#eee}
td.id,th.id{text-align:left}
.green{background:#b6e3b6}.orange{background:#f7cf8f}.red{background:#f08c8c}
.sev-none{}.sev-mild{background:#fde9a8}.sev-high{background:#f7b267}.sev-max{background:#e05353;color:#fff}
.zero{color:#bbb}
.panel{display:inline-block;vertical-align:top;margin:0 18px 12px 0}
.bars{display:flex;align-items:flex-end;height:120px;gap:6px;border-bottom:1px solid #888}
.bar{width:38px;text-align:center;font-size:11px}
.good{background:#4caf50}.fair{background:#ffb300}.poor{background:#e53935}
.low{background:#90caf9}.mid{background:#42a5f5}.high{background:#1565c0}
.na{background:#ddd}
.insufficient{color:#999;font-style:italic}
"""


def _page(title: str, body: str) -> str:
    return (f"<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>{html.escape(title)}</title>"
            f"<style>{CSS}</style></head>\n<body>\n<h1>{html.escape(title)}</h1>\n{body}</body></html>\n")


def _fmt_ms(ms) -> str:
    if ms is None:
        return "-"
    return datetime.fromtimestamp(ms / 1000, tz=timezone.utc).strftime("%Y-%m-%d %H:%M UTC")


def _num(x, fmt="%.1f") -> str:
    return "-" if x is None or not math.isfinite(x) else fmt % x


def age_color(hours, cfg: DashboardConfig | None = None) -> str:
    """green below 24 h, orange in [24, 96) h, red from 96 h or when nothing was received."""
    cfg = cfg or DashboardConfig()
    if hours is None or not math.isfinite(hours):
        return "red"
    if hours < cfg.orange_h:
        return "green"
    if hours < cfg.red_h:
        return "orange"
    return "red"


def severity_class(score, cfg: DashboardConfig | None = None) -> str:
    cfg = cfg or DashboardConfig()
    if score is None or not math.isfinite(score):
        return "sev-none"
    if score >= 1.0:
        return "sev-max"
    if score >= cfg.severity_high:
        return "sev-high"
    if score >= cfg.severity_mild:
        return "sev-mild"
    return "sev-none"


def efficiency_class(eff, cfg: DashboardConfig | None = None) -> str:
    cfg = cfg or DashboardConfig()
    if eff is None or not math.isfinite(eff):
        return "na"
    if eff >= cfg.efficiency_good:
        return "good"
    if eff >= cfg.efficiency_fair:
        return "fair"
    return "poor"


def rog_class(rog_km) -> str:
    if rog_km is None or not math.isfinite(rog_km):
        return "na"
    if rog_km < ROG_BUCKETS_KM[0]:
        return "low"
    if rog_km < ROG_BUCKETS_KM[1]:
        return "mid"
    return "high"


# --- data collection ---------------------------------------------------------------------

@dataclass
class CollectionStatus:
    participant: str
    ages_h: dict[str, float]
    last_visit: str | None
    visit_number: int
    wearing_h_per_day: float
    payment_pct: float
    phone_model: str
    enrollment: str
    colors: dict[str, str] = field(default_factory=dict)


def _local_midnight_ms(date: str, tz_min: int) -> int:
    return date_to_day(date) * MS_PER_DAY - tz_min * 60_000


def collection_status(meta: list[dict], participants: list[Participant], now_ms: int,
                      cfg: DashboardConfig | None = None) -> list[CollectionStatus]:
    """Per-participant upload health from metadata sidecars only.

    Uploads stamped after ``now_ms`` are ignored so a dashboard can be
    regenerated for any past instant.
    """
    cfg = cfg or DashboardConfig()
    by_pid: dict[str, list[dict]] = {}
    for m in meta:
        if m.get("uploaded_at") is not None and m["uploaded_at"] <= now_ms:
            by_pid.setdefault(m["participant"], []).append(m)
    out = []
    for p in sorted(participants, key=lambda q: q.participant_id):
        mine = by_pid.get(p.participant_id, [])

        def latest(kinds, key):
            vals = [m[key] for m in mine if m["kind"] in kinds and m.get(key) is not None and m[key] <= now_ms]
            return max(vals) if vals else None

        stamps = {
            "location": latest({"gps"}, "last_ts"),
            "sociability": latest(set(SOCIAL_KINDS), "last_ts"),
            "taps": latest({"tapsLog"}, "last_ts"),
            "phone_upload": latest({k.value for k in PHONE_KINDS}, "uploaded_at"),
            "fitbit_upload": latest({k.value for k in WEARABLE_KINDS}, "uploaded_at"),
            "sleep": latest({"sleep"}, "last_wake_ts"),
        }
        ages = {k: (math.nan if v is None else (now_ms - v) / MS_PER_HOUR) for k, v in stamps.items()}

        tz = p.tz_offset_min
        today = (now_ms + tz * 60_000) // MS_PER_DAY
        visits = sorted(v for v in p.visit_dates if date_to_day(v) <= today)
        last_visit = visits[-1] if visits else None
        wearing, payment = math.nan, math.nan
        if last_visit is not None:
            vday = date_to_day(last_visit)
            heart = [(date_to_day(m["date"]), m.get("samples", m.get("rows", 0)))
                     for m in mine if m["kind"] == "heart" and m.get("date")]
            secs_to_yesterday = sum(n for d, n in heart if vday <= d < today) * cfg.heart_interval_s
            secs_total = sum(n for d, n in heart if d >= vday) * cfg.heart_interval_s
            n_days = today - vday
            if n_days > 0:
                wearing = secs_to_yesterday / 3600.0 / n_days
            elapsed_days = (now_ms - _local_midnight_ms(last_visit, tz)) / MS_PER_DAY
            if elapsed_days > 0:
                payment = min(100.0, 100.0 * secs_total / (elapsed_days * cfg.wear_target_h * 3600.0))
        st = CollectionStatus(p.participant_id, ages, last_visit, visits.index(last_visit) + 1 if visits else 0,
                              wearing, payment, p.phone_model, p.enrollment_date)
        st.colors = {k: age_color(v, cfg) for k, v in ages.items()}
        out.append(st)
    return out


def issue_summary(rows: list[CollectionStatus]) -> dict[str, list[tuple[str, str]]]:
    """Orange/red participants by issue group as ``(participant, worst color)``."""
    out = {}
    for group, fields_ in ISSUE_GROUPS.items():
        hits = []
        for r in rows:
            cols = [r.colors[f] for f in fields_]
            if group == "Fitbit Sync Issues" and r.last_visit is not None and not r.wearing_h_per_day > 0:
                cols.append("red")
            if "red" in cols:
                hits.append((r.participant, "red"))
            elif "orange" in cols:
                hits.append((r.participant, "orange"))
        out[group] = hits
    return out


def render_collection_meta(meta: list[dict], participants: list[Participant], now_ms: int,
                           cfg: DashboardConfig | None = None) -> str:
    rows = collection_status(meta, participants, now_ms, cfg)
    wear_ups = [m["uploaded_at"] for m in meta
                if m["kind"] in {k.value for k in WEARABLE_KINDS} and m.get("uploaded_at") is not None
                and m["uploaded_at"] <= now_ms]
    parts = [f"<p>Dashboard Generated: {_fmt_ms(now_ms)}<br>"
             f"Last Fitbit Data Downloaded: {_fmt_ms(max(wear_ups) if wear_ups else None)}</p>\n"]
    head = ["Participant"] + [AGE_LABELS[f] for f in AGE_FIELDS] + [
        "Last Clinic Visit (visit #)", "Avg Fitbit Wearing Per Day (h)", "Payment Progress", "Phone Model",
        "Enrollment"]
    parts.append("<table>\n<tr>" + "".join(f"<th>{html.escape(h)}</th>" for h in head) + "</tr>\n")
    for r in rows:
        cells = [f"<td class=\"id\">{html.escape(r.participant)}</td>"]
        for f in AGE_FIELDS:
            cells.append(f"<td class=\"{r.colors[f]}\">{_num(r.ages_h[f])}</td>")
        visit = f"{r.last_visit} ({r.visit_number})" if r.last_visit else "-"
        cells += [f"<td>{visit}</td>", f"<td>{_num(r.wearing_h_per_day)}</td>",
                  f"<td>{_num(r.payment_pct, '%.0f%%')}</td>",
                  f"<td class=\"id\">{html.escape(r.phone_model)}</td>", f"<td>{html.escape(r.enrollment)}</td>"]
        parts.append("<tr>" + "".join(cells) + "</tr>\n")
    parts.append("</table>\n<h2>Issue summary</h2>\n")
    for group, hits in issue_summary(rows).items():
        items = "".join(f"<li class=\"{c}\">{html.escape(pid)}</li>" for pid, c in hits) or "<li>none</li>"
        parts.append(f"<h3>{group} ({len(hits)})</h3>\n<ul>{items}</ul>\n")
    return _page("Data Collection Dashboard", "".join(parts))


def render_collection(layout: StudyLayout, now_ms: int, cfg: DashboardConfig | None = None) -> str:
    """Collection dashboard from upload metadata; encrypted payloads are never opened."""
    registry = Registry.load(layout)
    return render_collection_meta(load_metadata(layout), [registry.get(p) for p in registry], now_ms, cfg)


# --- data completion ---------------------------------------------------------------------

def _stage3_days(path: Path) -> np.ndarray:
    """Local day of every record in a stage-3 table."""
    opts = pacsv.ConvertOptions(include_columns=["timestamp", "tz_offset"])
    t = pacsv.read_csv(path, convert_options=opts)
    ts = t.column("timestamp").to_numpy().astype("int64")
    tz = t.column("tz_offset").to_numpy().astype("int64")
    return (ts + tz * 60_000) // MS_PER_DAY


def completion_counts(layout: StudyLayout, pid: str, days: list[int]) -> pd.DataFrame:
    """Records per feature (rows) and local day (columns) from the stage-3 tables."""
    kinds = sorted(k.value for k in FeatureKind)
    out = pd.DataFrame(0, index=kinds, columns=day_to_date(np.asarray(days, dtype="int64")), dtype="int64")
    base = layout.stage(3) / pid
    lo = days[0] if days else 0
    for kind in kinds:
        f = base / f"{kind}.csv"
        if not f.exists() or not days:
            continue
        d = _stage3_days(f) - lo
        d = d[(d >= 0) & (d < len(days))]
        out.loc[kind] = np.bincount(d, minlength=len(days)).astype("int64")
    return out


def _last_day(layout: StudyLayout, pids: list[str]) -> int | None:
    last = None
    for pid in pids:
        for f in sorted((layout.stage(3) / pid).glob("*.csv")):
            d = _stage3_days(f)
            if len(d):
                last = int(d.max()) if last is None else max(last, int(d.max()))
    return last


def render_completion(layout: StudyLayout, days: int = 90, end: str | None = None) -> str:
    """Per participant a feature x day matrix of record counts for the ``days`` days ending at ``end``.

    ``end`` defaults to the latest day present in any stage-3 table.
    """
    base = layout.stage(3)
    pids = sorted(set(layout.participants()) | ({p.name for p in base.iterdir() if p.is_dir()}
                                                 if base.is_dir() else set()))
    last = date_to_day(end) if end else _last_day(layout, pids)
    span = list(range(last - days + 1, last + 1)) if last is not None else []
    parts = [f"<p>{days} days ending {day_to_date(last) if last is not None else '-'}</p>\n"]
    for pid in pids:
        counts = completion_counts(layout, pid, span)
        parts.append(f"<h2>{html.escape(pid)}</h2>\n<table>\n<tr><th class=\"id\">Feature</th>"
                     + "".join(f"<th>{c}</th>" for c in counts.columns) + "</tr>\n")
        for kind, row in counts.iterrows():
            cells = "".join(f"<td class=\"zero\">0</td>" if v == 0 else f"<td>{v}</td>" for v in row.tolist())
            parts.append(f"<tr><td class=\"id\">{kind}</td>{cells}</tr>\n")
        parts.append("</table>\n")
    return _page("Data Completion Dashboard", "".join(parts))


# --- clinician -----------------------------------------------------------------------------

WINDOWS = (("PM", 44, 15), ("PW", 14, 8), ("CW", 7, 1))


def clinician_windows(today: str) -> dict[str, tuple[int, int]]:
    """Inclusive day ranges: CW is the 7 days before today, PW the 7 before that, PM the 30 before PW."""
    t = date_to_day(today)
    return {name: (t - a, t - b) for name, a, b in WINDOWS}


def _col(daily: dict[str, pd.DataFrame], family: str, col: str) -> pd.Series:
    df = daily.get(family)
    if df is None or col not in df:
        return pd.Series(dtype=float)
    return pd.Series(df[col].to_numpy(float), index=df["day"].to_numpy())


def clinician_daily(daily: dict[str, pd.DataFrame]) -> pd.DataFrame:
    """Per-day values behind the three clinician panels."""
    in_bed = _col(daily, "sleep", "daily_total_hrs").add(_col(daily, "sleep", "daily_awake_hrs"), fill_value=0)
    in_bed = in_bed[_col(daily, "sleep", "daily_total_hrs").reindex(in_bed.index).notna()]
    contacts = _col(daily, "sociabilityLog", "daily_n_contacts").add(
        sum((_col(daily, "textsLog", c) for c in ("daily_n_contacts_only_received", "daily_n_contacts_both",
                                                   "daily_n_contacts_only_sent")), pd.Series(dtype=float)),
        fill_value=0)
    calls = _col(daily, "callLog", "daily_n_long_calls").add(_col(daily, "sociabilityCallLog", "daily_n_long_calls"),
                                                            fill_value=0)
    home = _col(daily, "gps-mobility", "Hometime")
    missing = _col(daily, "gps-mobility", "MinsMissing").reindex(home.index).fillna(0)
    away = (1440.0 - home - missing).clip(lower=0) / 60.0
    rog = _col(daily, "gps-mobility", "RoG") / 1000.0
    return pd.DataFrame({"sleep_hrs": in_bed, "sleep_eff": _col(daily, "sleep", "daily_mean_efficiency"),
                         "contacts": contacts, "long_calls": calls, "away_hrs": away, "rog_km": rog})


def window_means(per_day: pd.DataFrame, windows: dict[str, tuple[int, int]]) -> dict[str, dict[str, float]]:
    out = {}
    for name, (lo, hi) in windows.items():
        sel = per_day[(per_day.index >= lo) & (per_day.index <= hi)]
        out[name] = {c: (float(sel[c].mean()) if sel[c].notna().any() else math.nan) for c in per_day.columns}
        out[name]["n_days"] = {c: int(sel[c].notna().sum()) for c in per_day.columns}
    return out


def _bars(means: dict, value: str, scale: float, color_fn, color_key: str | None, unit: str) -> str:
    cells = []
    for name, _, _ in WINDOWS:
        m = means[name]
        v = m[value]
        if m["n_days"][value] < 1:
            cells.append(f"<div class=\"bar insufficient\">{name}<br>insufficient data</div>")
            continue
        h = int(round(min(1.0, v / scale) * 100)) if scale > 0 else 0
        cls = color_fn(m[color_key]) if color_key else "mid"
        cells.append(f"<div class=\"bar\">{v:.1f}{unit}<div class=\"{cls}\" style=\"height:{h}px\"></div>{name}</div>")
    return "<div class=\"bars\">" + "".join(cells) + "</div>"


def render_clinician_data(per_pid: dict[str, pd.DataFrame], today: str, cfg: DashboardConfig | None = None) -> str:
    cfg = cfg or DashboardConfig()
    windows = clinician_windows(today)
    parts = ["<p>Windows: " + ", ".join(f"{n} {day_to_date(lo)} to {day_to_date(hi)}"
                                        for n, (lo, hi) in windows.items()) + "</p>\n"]
    for pid in sorted(per_pid):
        means = window_means(per_pid[pid], windows)
        parts.append(f"<h2>{html.escape(pid)}</h2>\n")
        panels = [
            ("Sleep (h in bed, color = efficiency)", [("sleep_hrs", 12.0, lambda e: efficiency_class(e, cfg),
                                                       "sleep_eff", "h")]),
            ("Sociability (contacts/day, calls &gt; 1 min/day)", [("contacts", 20.0, None, None, ""),
                                                                   ("long_calls", 10.0, None, None, "")]),
            ("Mobility (h away, color = RoG)", [("away_hrs", 24.0, rog_class, "rog_km", "h")]),
        ]
        for title, specs in panels:
            used = [s[0] for s in specs]
            if all(means[n]["n_days"][c] < 1 for n, _, _ in WINDOWS for c in used):
                parts.append(f"<div class=\"panel\"><h3>{title}</h3><p class=\"insufficient\">insufficient data"
                             f"</p></div>\n")
                continue
            body = "".join(_bars(means, c, s, fn, ck, u) for c, s, fn, ck, u in specs)
            parts.append(f"<div class=\"panel\"><h3>{title}</h3>{body}</div>\n")
    return _page("Clinician Dashboard", "".join(parts))


def render_clinician(layout: StudyLayout, today: str, cfg: DashboardConfig | None = None) -> str:
    from .pipeline import load_summaries

    base = layout.stage(5)
    pids = sorted(p.name for p in base.iterdir() if p.is_dir()) if base.is_dir() else []
    per_pid = {pid: clinician_daily(load_summaries(layout, pid)[1]) for pid in pids}
    return render_clinician_data(per_pid, today, cfg)


# --- anomaly -------------------------------------------------------------------------------

def render_anomaly_table(scores: pd.DataFrame, date: str, cfg: DashboardConfig | None = None) -> str:
    cfg = cfg or DashboardConfig()
    rows = scores[scores["Date"] == date].sort_values("Patient ID", kind="mergesort")
    cols = SCORE_COLUMNS[2:]
    parts = [f"<p>Date: {html.escape(date)}</p>\n<table>\n<tr><th class=\"id\">Patient ID</th>"
             + "".join(f"<th>{html.escape(c)}</th>" for c in cols) + "</tr>\n"]
    for _, r in rows.iterrows():
        cells = [f"<td class=\"id\">{html.escape(str(r['Patient ID']))}</td>"]
        for c in cols:
            v = float(r[c])
            # classify the value as shown, so a cell reading 1.0000 is max severity
            v = round(v, 4) if math.isfinite(v) else v
            text = "nan" if not math.isfinite(v) else f"{v:.4f}"
            cells.append(f"<td class=\"{severity_class(v, cfg)}\">{text}</td>")
        parts.append("<tr>" + "".join(cells) + "</tr>\n")
    parts.append("</table>\n")
    return _page("Anomaly Detection Dashboard", "".join(parts))


def render_anomaly(layout: StudyLayout, date: str | None = None, cfg: DashboardConfig | None = None) -> str:
    scores = read_scores(layout.anomaly_dir / SCORES_FILE)
    if date is None:
        date = str(scores["Date"].max()) if len(scores) else "-"
    return render_anomaly_table(scores, date, cfg)
