import math

import numpy as np
import pandas as pd
import pytest

from phenopipe.config import MobilityConfig
from phenopipe.mobility import (MOBILITY_METRICS, detect_home, extract_pauses_flights, summarize_gps, to_track)
from phenopipe.privacy import obfuscate_gps, unproject
from phenopipe.schemas import FeatureKind
from phenopipe.synthgen import generate_day, make_profile

REF = 1.35
DAY0 = 18_500
T0 = DAY0 * 86_400_000


def fixes(points, tz=0):
    """points: (local seconds since DAY0 midnight, x metres, y metres)."""
    t = np.array([p[0] for p in points], float)
    lat, lon = unproject(np.array([p[1] for p in points]), np.array([p[2] for p in points]), REF)
    return pd.DataFrame({"timestamp": (T0 + t * 1000).astype("int64") - tz * 60_000, "tz_offset": tz,
                         "lat": lat + REF, "lon": lon + 103.8, "accuracy": 10.0})


def dwell(x, y, start_s, end_s, step_s=60):
    return [(t, x, y) for t in np.arange(start_s, end_s + 1, step_s)]


def generated_gps(days=4, seed=7, index=2):
    prof = make_profile(seed, index, REF)
    parts = [generate_day(prof, d, DAY0, b"\x00" * 16, (0.0, 0.0), 480, REF)[FeatureKind.gps].to_pandas()
             for d in range(days)]
    return pd.concat(parts, ignore_index=True)


def _close(a, b, rel):
    a, b = np.asarray(a, float), np.asarray(b, float)
    same_nan = np.isnan(a) & np.isnan(b)
    ok = np.isclose(a, b, rtol=rel, atol=1e-9)
    return bool((same_nan | ok).all())


def test_metrics_invariant_under_obfuscation():
    df = generated_gps()
    base = summarize_gps(df, ref_lat=REF).daily[MOBILITY_METRICS]
    assert base["NumFlights"].sum() > 0 and base["Hometime"].notna().all()
    rng = np.random.default_rng(0)
    for _ in range(50):
        off = rng.uniform(-20_000, 20_000, 2)
        lat, lon = obfuscate_gps(off, df["lat"].to_numpy(), df["lon"].to_numpy(), ref_lat=REF)
        moved = df.assign(lat=lat, lon=lon)
        got = summarize_gps(moved, ref_lat=REF).daily[MOBILITY_METRICS]
        assert _close(got.to_numpy(), base.to_numpy(), 1e-6)


@pytest.mark.parametrize("n1,n2,dist", [(10, 10, 1000.0), (7, 3, 2500.0), (40, 1, 333.3)])
def test_two_cluster_radius_of_gyration(n1, n2, dist):
    pts = [(3600 + 60 * i, 0.0, 0.0) for i in range(n1)] + [(3600 + 60 * (n1 + i), dist, 0.0) for i in range(n2)]
    rog = summarize_gps(fixes(pts), ref_lat=REF).daily["RoG"].iloc[0]
    assert rog == pytest.approx(dist * math.sqrt(n1 * n2) / (n1 + n2), rel=1e-9)


def test_half_day_at_home_half_away():
    pts = dwell(0, 0, 0, 43_140) + dwell(1000, 0, 43_200, 86_340)
    assert summarize_gps(fixes(pts), ref_lat=REF).daily["RoG"].iloc[0] == pytest.approx(500.0, rel=1e-9)


def test_whole_day_at_home():
    d = summarize_gps(fixes(dwell(0, 0, 0, 86_340, 300)), ref_lat=REF).daily.iloc[0]
    assert d["Hometime"] == 1440 and d["RoG"] == 0 and d["SigLocEntropy"] == 0
    assert d["NumFlights"] == 0 and d["MinsMissing"] == 0 and d["SigLocsVisited"] == 1


def test_stationary_day_one_pause():
    tr = to_track(fixes(dwell(0, 0, 36_000, 50_000)), REF)
    pf = extract_pauses_flights(tr.local, tr.x, tr.y)
    assert len(pf.pauses) == 1 and pf.flights == []


def test_two_places_one_flight():
    pts = dwell(0, 0, 36_000, 39_600) + dwell(2000, 0, 39_900, 43_500)
    tr = to_track(fixes(pts), REF)
    pf = extract_pauses_flights(tr.local, tr.x, tr.y)
    assert len(pf.pauses) == 2 and len(pf.flights) == 1
    assert pf.flights[0].length == pytest.approx(2000.0, rel=1e-9)
    assert pf.flights[0].duration == pytest.approx(300.0)


def _home(pts):
    tr = to_track(fixes(pts), REF)
    traces = {DAY0: (tr, extract_pauses_flights(tr.local, tr.x, tr.y))}
    return detect_home(traces, MobilityConfig())


def test_home_single_night_point():
    hx, hy = _home([(0, 0.0, 0.0)] + dwell(500, 500, 60, 5 * 3600))
    assert (hx, hy) == pytest.approx((500.0, 500.0), abs=1e-6)


def test_home_is_longest_night_cluster():
    pts = [(0, -300.0, 0.0)] + dwell(0, 0, 60, 6 * 3600) + dwell(5000, 0, 21 * 3600, 23 * 3600)
    hx, hy = _home(pts)
    assert (hx, hy) == pytest.approx((300.0, 0.0), abs=1e-6)


def test_empty_day_in_range_is_missing():
    pts = dwell(0, 0, 0, 3600) + [(2 * 86_400 + 60, 0.0, 0.0)]
    d = summarize_gps(fixes(pts), ref_lat=REF).daily
    assert len(d) == 3
    mid = d.iloc[1]
    assert mid["MinsMissing"] == 1440
    assert mid.drop(["day", "MinsMissing"]).isna().all()
