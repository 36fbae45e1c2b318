import json

import numpy as np
import pandas as pd

from phenopipe.features.manifest import (ADDED, LISTED, Manifest, combine_daily, default_manifest,
                                         reconciliation_markdown)

# per-family dimension totals of the reference feature table
REFERENCE_TOTALS = {
    "sleep": (17, 0, 17), "steps": (14, 4, 110), "heart": (12, 6, 156), "gps-mobility": (15, 0, 15),
    "accel": (0, 5, 120), "accessibilityLog": (0, 1, 24), "callLog": (5, 0, 5), "light": (3, 2, 51),
    "powerState": (6, 2, 54), "sociabilityCallLog": (4, 0, 4), "sociabilityLog": (9, 0, 9),
    "tapsLog": (13, 6, 157), "textsLog": (7, 0, 7),
}


def test_length_and_family_totals():
    m = default_manifest()
    assert len(m) == 729
    assert m.family_totals() == {f: t for f, (_, _, t) in REFERENCE_TOTALS.items()}
    for f in m.families:
        daily = sum(1 for e in f.entries if e.granularity == "daily")
        hourly = sum(1 for e in f.entries if e.granularity == "hourly")
        assert (daily, hourly) == REFERENCE_TOTALS[f.family][:2]
        assert (f.target_daily, f.target_hourly) == (daily, hourly)


def test_reconciliation_lists_every_adjustment():
    m = default_manifest()
    md = reconciliation_markdown(m)
    assert "Total dimensions: 729" in md
    adjusted = 0
    for f in m.families:
        for e in f.entries:
            if e.origin == ADDED:
                assert f"added `{e.family}.{e.stat}` ({e.granularity})" in md
                adjusted += 1
            else:
                assert e.origin == LISTED
        for stat, gran, _ in f.dropped:
            assert f"not selected `{f.family}.{stat}` ({gran})" in md
            adjusted += 1
    assert adjusted > 0


def test_manifest_json_round_trip():
    m = default_manifest()
    back = Manifest.from_json(m.to_json())
    assert back.columns == m.columns
    assert json.loads(m.to_json())["dimensions"] == 729


def test_empty_day_is_all_missing():
    m = default_manifest()
    out = combine_daily(m, [100], {}, {})
    assert out.shape == (1, 729) and out.isna().all().all()


def test_hourly_value_lands_in_its_hour():
    m = default_manifest()
    hourly = {"accessibilityLog": pd.DataFrame({"day": [100], "hour": [7], "hourly_delete_ratio": [0.5]})}
    out = combine_daily(m, [100], hourly, {})
    cols = [c for c in m.columns if c.startswith("accessibilityLog.hourly_delete_ratio.h")]
    assert len(cols) == 24
    vals = out[cols].iloc[0].to_numpy()
    assert vals[7] == 0.5 and np.isnan(np.delete(vals, 7)).all()


def test_pipeline_writes_reconciliation(small_study):
    layout = small_study["layout"]
    out = layout.stage(6)
    assert (out / "manifest-reconciliation.md").read_text() == reconciliation_markdown(default_manifest())
    allv = pd.read_csv(out / "all.csv.gz", nrows=2)
    assert list(allv.columns) == ["participant", "date"] + default_manifest().columns
