"""GPS mobility: pause/flight decomposition, home detection and 15 daily metrics.

All geometry happens in a local planar frame (metres), the same projection
used for obfuscation, so a participant's fixed displacement is a pure
translation and every metric is unchanged by it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.spatial import ConvexHull, QhullError

from .config import MobilityConfig
from .features.common import Summary, finalize_daily
from .privacy import project
from .schemas import local_ms

MOBILITY_FAMILY = "gps-mobility"
MOBILITY_METRICS = [
    "Hometime", "SigLocsVisited", "RoG", "MaxHomeDist", "DistTravelled", "MaxDiam", "AvgFlightLen",
    "StdFlightLen", "AvgFlightDur", "StdFlightDur", "ProbPause", "SigLocEntropy", "MinsMissing",
    "FirstMoveTime", "NumFlights",
]


class NoNightData(ValueError):
    pass


@dataclass
class Pause:
    x: float
    y: float
    start: float  # seconds
    end: float
    first: int  # sample index range [first, last)
    last: int

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass
class Flight:
    src: int
    dst: int
    length: float
    duration: float
    start: float


@dataclass
class PauseFlightTrace:
    pauses: list[Pause] = field(default_factory=list)
    flights: list[Flight] = field(default_factory=list)


@dataclass
class Track:
    """One participant's fixes: UTC seconds, local seconds, planar x/y in metres."""
    t: np.ndarray
    local: np.ndarray
    x: np.ndarray
    y: np.ndarray

    def day(self, d: int) -> "Track":
        lo, hi = np.searchsorted(self.local, [d * 86400.0, (d + 1) * 86400.0])
        return Track(self.t[lo:hi], self.local[lo:hi], self.x[lo:hi], self.y[lo:hi])

    def __len__(self):
        return len(self.t)


def to_track(df: pd.DataFrame, ref_lat: float, origin: tuple[float, float] | None = None) -> Track:
    """Project fixes to the planar frame; coordinates are taken relative to ``origin``
    (the first fix when omitted) to keep magnitudes small."""
    df = df.sort_values(["timestamp", "lat", "lon"], kind="mergesort")
    x, y = project(df["lat"].to_numpy(float), df["lon"].to_numpy(float), ref_lat)
    if origin is None:
        origin = (x[0], y[0]) if len(x) else (0.0, 0.0)
    return Track(df["timestamp"].to_numpy(float) / 1000.0, local_ms(df) / 1000.0,
                 x - origin[0], y - origin[1])


def extract_pauses_flights(t, x, y, radius_m: float = 50.0, min_s: float = 300.0) -> PauseFlightTrace:
    """Greedy pause detection on time-ordered fixes.

    A pause grows while each next fix stays within ``radius_m`` of the running
    centroid and is kept when it spans at least ``min_s`` seconds. Flights
    join consecutive pauses, following the fixes recorded in between.
    """
    t = np.asarray(t, float).tolist()
    x = np.asarray(x, float).tolist()
    y = np.asarray(y, float).tolist()
    n = len(t)
    trace = PauseFlightTrace()
    i = 0
    while i < n:
        cx, cy, k = x[i], y[i], 1
        j = i + 1
        while j < n and math.hypot(x[j] - cx, y[j] - cy) <= radius_m:
            k += 1
            cx += (x[j] - cx) / k
            cy += (y[j] - cy) / k
            j += 1
        if t[j - 1] - t[i] >= min_s:
            trace.pauses.append(Pause(cx, cy, t[i], t[j - 1], i, j))
            i = j
        else:
            i += 1
    for a, b in zip(range(len(trace.pauses) - 1), range(1, len(trace.pauses))):
        p, q = trace.pauses[a], trace.pauses[b]
        px, py = [p.x] + x[p.last:q.first] + [q.x], [p.y] + y[p.last:q.first] + [q.y]
        length = float(np.hypot(np.diff(px), np.diff(py)).sum())
        trace.flights.append(Flight(a, b, length, q.start - p.end, p.end))
    return trace


def cluster_pauses(pauses: list[Pause], merge_m: float = 200.0) -> list[dict]:
    """Greedy dwell-weighted clustering; each pause joins the first cluster within ``merge_m``."""
    clusters: list[dict] = []
    for p in pauses:
        w = max(p.duration, 1e-9)
        for c in clusters:
            if math.hypot(p.x - c["x"], p.y - c["y"]) <= merge_m:
                tot = c["w"] + w
                c["x"] += (p.x - c["x"]) * w / tot
                c["y"] += (p.y - c["y"]) * w / tot
                c["w"] = tot
                c["dwell"] += p.duration
                c["members"].append(p)
                break
        else:
            clusters.append({"x": p.x, "y": p.y, "w": w, "dwell": p.duration, "members": [p]})
    return clusters


def _night_overlap(start_local: float, end_local: float, night_start_h: int, night_end_h: int) -> float:
    """Seconds of [start, end) (local seconds) falling in the nightly window."""
    total = 0.0
    d0 = int(start_local // 86400) - 1
    d1 = int(end_local // 86400) + 1
    for d in range(d0, d1 + 1):
        lo = d * 86400.0 + night_start_h * 3600.0
        hi = (d + 1) * 86400.0 + night_end_h * 3600.0
        total += max(0.0, min(end_local, hi) - max(start_local, lo))
    return total


def detect_home(traces: dict[int, tuple[Track, PauseFlightTrace]], cfg: MobilityConfig | None = None):
    """Centroid of the location with the largest night-time dwell across all days."""
    cfg = cfg or MobilityConfig()
    night = []
    for d in sorted(traces):
        tr, pf = traces[d]
        for p in pf.pauses:
            ls = tr.local[p.first]
            le = ls + p.duration
            dwell = _night_overlap(ls, le, cfg.night_start_h, cfg.night_end_h)
            if dwell > 0:
                night.append(Pause(p.x, p.y, 0.0, dwell, p.first, p.last))
    if not night:
        raise NoNightData("no night-time pauses")
    clusters = cluster_pauses(night, cfg.sigloc_merge_m)
    best = max(clusters, key=lambda c: c["dwell"])
    return best["x"], best["y"]


def _covered_minutes(local_s: np.ndarray, day: int, hold_s: float) -> tuple[np.ndarray, np.ndarray]:
    """For each minute of ``day``: index of the fix describing it (or -1)."""
    minute = np.floor(local_s / 60.0).astype("int64") - day * 1440
    idx = np.full(1440, -1, dtype="int64")
    if len(minute) == 0:
        return idx, np.zeros(1440, dtype=bool)
    m = np.arange(1440)
    # last fix whose minute is at or before m
    j = np.searchsorted(minute, m, side="right") - 1
    ok = j >= 0
    age = np.where(ok, m - minute[np.clip(j, 0, None)], 10**9)
    ok &= age < max(1, int(round(hold_s / 60.0)))
    idx[ok] = j[ok]
    return idx, ok


def _max_diameter(x: np.ndarray, y: np.ndarray) -> float:
    if len(x) < 2:
        return 0.0
    pts = np.column_stack([x, y])
    if len(pts) > 64:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except (QhullError, ValueError):
            # degenerate (collinear) sets: the extremes along the main axis suffice
            c = pts - pts.mean(axis=0)
            axis = np.linalg.svd(c, full_matrices=False)[2][0]
            proj = c @ axis
            pts = pts[[int(np.argmin(proj)), int(np.argmax(proj))]]
    d = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((d ** 2).sum(axis=2)).max())


def daily_mobility(track: Track, trace: PauseFlightTrace, home, day: int,
                   cfg: MobilityConfig | None = None) -> dict:
    """The 15 metrics for one local day of fixes."""
    cfg = cfg or MobilityConfig()
    out = {k: np.nan for k in MOBILITY_METRICS}
    if len(track) == 0:
        out["MinsMissing"] = 1440.0
        return out
    x, y = track.x, track.y
    idx, covered = _covered_minutes(track.local, day, cfg.hold_s)
    out["MinsMissing"] = float(1440 - covered.sum())
    if home is not None:
        hd = np.hypot(x - home[0], y - home[1])
        out["Hometime"] = float((hd[idx[covered]] <= cfg.home_radius_m).sum())
        out["MaxHomeDist"] = float(hd.max())
    cx, cy = x.mean(), y.mean()
    out["RoG"] = float(np.sqrt(np.mean((x - cx) ** 2 + (y - cy) ** 2)))
    out["MaxDiam"] = _max_diameter(x, y)

    flights = trace.flights
    lens = np.array([f.length for f in flights])
    durs = np.array([f.duration for f in flights])
    out["NumFlights"] = float(len(flights))
    out["DistTravelled"] = float(lens.sum()) if len(lens) else 0.0
    if len(flights):
        out["AvgFlightLen"], out["StdFlightLen"] = float(lens.mean()), float(lens.std())
        out["AvgFlightDur"], out["StdFlightDur"] = float(durs.mean()), float(durs.std())
        first = trace.pauses[flights[0].src]
        out["FirstMoveTime"] = float((track.local[first.first] + first.duration) / 60.0 - day * 1440)
    pause_s = sum(p.duration for p in trace.pauses)
    flight_s = float(durs.sum()) if len(durs) else 0.0
    if pause_s + flight_s > 0:
        out["ProbPause"] = pause_s / (pause_s + flight_s)

    clusters = cluster_pauses(trace.pauses, cfg.sigloc_merge_m)
    if clusters:
        sig = [c for c in clusters if c["dwell"] >= cfg.sigloc_min_dwell_s]
        if not sig:
            sig = [max(clusters, key=lambda c: c["dwell"])]
        out["SigLocsVisited"] = float(len(sig))
        w = np.array([c["dwell"] for c in sig], dtype=float)
        if len(sig) == 1 or w.sum() <= 0:
            out["SigLocEntropy"] = 0.0
        else:
            p = w / w.sum()
            p = p[p > 0]
            out["SigLocEntropy"] = float(-(p * np.log(p)).sum())
    else:
        out["SigLocsVisited"] = 0.0
    return out


def summarize_gps(df: pd.DataFrame, cfg: MobilityConfig | None = None, ref_lat: float = 1.35) -> Summary:
    """Daily mobility metrics for every day from the first to the last fix."""
    cfg = cfg or MobilityConfig()
    if df.empty:
        return Summary(daily=finalize_daily(pd.DataFrame(columns=MOBILITY_METRICS)))
    track = to_track(df, ref_lat)
    days = np.floor(track.local / 86400.0).astype("int64")
    traces = {}
    for d in np.unique(days):
        tr = track.day(int(d))
        traces[int(d)] = (tr, extract_pauses_flights(tr.local, tr.x, tr.y, cfg.pause_radius_m, cfg.pause_min_s))
    try:
        home = detect_home(traces, cfg)
    except NoNightData:
        home = None
    rows = {}
    for d in range(int(days.min()), int(days.max()) + 1):
        tr, pf = traces.get(d, (track.day(d), PauseFlightTrace()))
        rows[d] = daily_mobility(tr, pf, home, d, cfg)
    daily = pd.DataFrame.from_dict(rows, orient="index")[MOBILITY_METRICS]
    return Summary(daily=finalize_daily(daily), counts=frozenset({"NumFlights", "MinsMissing"}))
