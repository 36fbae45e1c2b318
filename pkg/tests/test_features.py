import numpy as np
import pandas as pd
import pytest

from phenopipe.features import (classify_app, default_mapping, summarize_accel_hourly,
                                summarize_accessibility_hourly, summarize_calllog_daily, summarize_heart,
                                summarize_light, summarize_power, summarize_sleep_daily, summarize_sms_daily,
                                summarize_sociability_msgs_daily, summarize_steps, summarize_taps)

DAY0 = 18_500  # a Monday in 2020
T0 = DAY0 * 86_400_000


def at(h, m=0, s=0.0, day=0):
    return int(T0 + day * 86_400_000 + (h * 3600 + m * 60 + s) * 1000)


def frame(ts, **cols):
    return pd.DataFrame({"timestamp": np.asarray(ts, dtype="int64"), "tz_offset": 0, **cols})


def hour_row(summary, hour, day=DAY0):
    h = summary.hourly
    return h[(h["day"] == day) & (h["hour"] == hour)].iloc[0]


# --- accelerometer --------------------------------------------------------------

def test_constant_gravity():
    s = summarize_accel_hourly(frame([at(9, 0, i) for i in range(5)], x=0.0, y=0.0, z=9.81))
    r = hour_row(s, 9)
    assert r["hourly_L_mean"] == pytest.approx(9.81) and r["hourly_L_std"] == 0 and r["hourly_ddt_max"] == 0


def test_axis_swap_rate():
    s = summarize_accel_hourly(frame([at(9), at(9, 0, 0.1)], x=[1.0, 0.0], y=[0.0, 1.0], z=[0.0, 0.0]))
    assert hour_row(s, 9)["hourly_ddt_max"] == pytest.approx(10.0)


def test_single_accel_sample():
    r = hour_row(summarize_accel_hourly(frame([at(9)], x=3.0, y=4.0, z=0.0)), 9)
    assert r["hourly_L_max"] == 5.0 and np.isnan(r["hourly_ddt_max"])


# --- accessibility ---------------------------------------------------------------

def test_delete_ratio():
    tokens = ["alphabetic"] * 8 + ["DELETE"] * 2 + ["click"] * 3
    s = summarize_accessibility_hourly(frame([at(10, 0, i) for i in range(13)], token=tokens, app="a"))
    r = hour_row(s, 10)
    assert r["hourly_delete_ratio"] == pytest.approx(0.2) and r["hourly_n_taps"] == 13


def test_no_keyboard_means_missing_ratio():
    r = hour_row(summarize_accessibility_hourly(frame([at(10)], token=["click"], app="a")), 10)
    assert np.isnan(r["hourly_delete_ratio"])
    assert hour_row(summarize_accessibility_hourly(frame([at(10)], token=["click"], app="a")), 3)[
        "hourly_n_taps"] == 0


# --- heart -------------------------------------------------------------------------

def test_constant_heart_rate():
    s = summarize_heart(frame([at(8, 0, 5 * i) for i in range(20)], bpm=60))
    d = s.daily.iloc[0]
    assert d["daily_HRV_max"] == 0 and d["daily_absHRV_std"] == 0
    assert d["daily_HR_q25"] == 60 and d["daily_HR_q12_5"] == 60 and d["daily_n_samples"] == 20


def test_heart_rate_derivative():
    s = summarize_heart(frame([at(8), at(8, 0, 5)], bpm=[60, 70]))
    assert s.daily.iloc[0]["daily_HRV_max"] == pytest.approx(2.0)
    assert hour_row(s, 8)["hourly_HRV_max"] == pytest.approx(2.0)


def test_heart_quantiles_match_sort():
    rng = np.random.default_rng(2)
    bpm = rng.integers(40, 180, 100)
    d = summarize_heart(frame([at(12, 0, 5 * i) for i in range(100)], bpm=bpm)).daily.iloc[0]
    s = np.sort(bpm)
    for q, col in ((0.25, "daily_HR_q25"), (0.125, "daily_HR_q12_5")):
        pos = q * 99
        lo = int(pos)
        assert d[col] == pytest.approx(s[lo] + (s[lo + 1] - s[lo]) * (pos - lo))


# --- light --------------------------------------------------------------------------

@pytest.mark.parametrize("lux,expected", [([10, 20, 30, 40], 35.0), ([10, 20, 30], 25.0)])
def test_fifty_high(lux, expected):
    s = summarize_light(frame([at(13, i) for i in range(len(lux))], lux=np.asarray(lux, float)))
    assert s.daily.iloc[0]["daily_50high"] == expected
    assert hour_row(s, 13)["hourly_50high"] == expected


def test_dark_day():
    d = summarize_light(frame([at(1), at(2)], lux=0.0)).daily.iloc[0]
    assert d["daily_max_log1p_lux"] == 0 and d["daily_mean_log1p_lux"] == 0


# --- power --------------------------------------------------------------------------

def test_screen_session_in_one_hour():
    s = summarize_power(frame([at(10), at(10, 30)], event=["screen_on", "screen_off"]))
    assert hour_row(s, 10)["hourly_screen_on_secs"] == 1800


def test_screen_session_across_hour():
    s = summarize_power(frame([at(10, 50), at(11, 10)], event=["screen_on", "screen_off"]))
    assert hour_row(s, 10)["hourly_screen_on_secs"] == 600
    assert hour_row(s, 11)["hourly_screen_on_secs"] == 600
    assert s.daily.iloc[0]["daily_session_max"] == 1200


def test_power_down_count():
    s = summarize_power(frame([at(1), at(2), at(3), at(4)], event=["power_off", "power_on", "power_off", "power_on"]))
    assert s.daily.iloc[0]["daily_n_power_down"] == 2


def test_open_session_closes_at_midnight():
    s = summarize_power(frame([at(23, 30)], event=["screen_on"]))
    assert hour_row(s, 23)["hourly_screen_on_secs"] == 1800
    assert len(s.daily) == 1


# --- sleep ---------------------------------------------------------------------------

def test_pure_light_block():
    d = summarize_sleep_daily(frame([at(23, 15, day=-1)], stage=["light"], duration_s=[8 * 3600])).daily.iloc[0]
    assert d["day"] == DAY0
    assert d["daily_start_offset_hrs"] == 0 and d["daily_efficiency"] == 1.0
    assert [d[f"daily_ratio_{s}"] for s in ("deep", "light", "rem", "awake")] == [0, 1, 0, 0]


def test_awake_edges():
    ts = [at(23, 0, day=-1), at(23, 30, day=-1), at(6, 30)]
    d = summarize_sleep_daily(frame(ts, stage=["awake", "light", "awake"],
                                    duration_s=[1800, 7 * 3600, 900])).daily.iloc[0]
    assert d["daily_time_to_asleep_hrs"] == pytest.approx(0.5)
    assert d["daily_time_to_getup_hrs"] == pytest.approx(0.25)
    assert d["daily_efficiency"] == pytest.approx((7.75 - 0.75) / 7.75)


def test_nap_not_main_but_counted():
    ts = [at(0, 0), at(13, 0)]
    d = summarize_sleep_daily(frame(ts, stage=["deep", "rem"], duration_s=[6 * 3600, 3600])).daily.iloc[0]
    assert d["daily_ratio_deep"] == 1.0 and d["daily_ratio_rem"] == 0
    assert d["daily_rem_hrs"] == 1.0 and d["daily_total_hrs"] == 7.0
    assert d["daily_end_offset_hrs"] == pytest.approx(6 - 7.25)


def test_no_sleep_segments():
    s = summarize_sleep_daily(frame([], stage=[], duration_s=[]))
    assert len(s.daily) == 0


# --- steps ---------------------------------------------------------------------------

def _steps(mins, heart=None):
    return summarize_steps(frame([at(9, i) for i in range(len(mins))], steps=mins), heart)


def test_three_minute_walk():
    d = _steps([12, 11, 10]).daily.iloc[0]
    assert d["daily_n_walks"] == 1 and d["daily_walk_mins_max"] == 3 and d["daily_walk_steps_per_min"] == 11


def test_nine_breaks_walk():
    d = _steps([12, 9, 12, 12, 12]).daily.iloc[0]
    assert d["daily_n_walks"] == 1 and d["daily_walk_mins_max"] == 3 and d["daily_n_mins_walk"] == 3


def test_no_heart_no_wearing():
    d = _steps([12, 0, 0]).daily.iloc[0]
    assert d["daily_n_mins_wearing"] == 0 and d["daily_n_mins_sedentary_wearing"] == 0
    heart = frame([at(9, 1, 10), at(9, 2, 10)], bpm=60)
    d = _steps([12, 0, 0], heart).daily.iloc[0]
    assert d["daily_n_mins_wearing"] == 2 and d["daily_n_mins_sedentary_wearing"] == 2


# --- taps ------------------------------------------------------------------------------

def _power(on, off):
    return frame([on, off], event=["screen_on", "screen_off"])


def test_intertap_in_session():
    taps = frame([at(9), at(9, 0, 1), at(9, 0, 3)], app="com.whatsapp", orientation=0)
    s = summarize_taps(taps, _power(at(8, 59), at(9, 5)))
    r = hour_row(s, 9)
    assert r["hourly_intertap_median"] == 1.5 and r["hourly_intertap_max"] == 2 and r["hourly_intertap_min"] == 1


def test_pair_across_screen_off_excluded():
    taps = frame([at(9), at(9, 0, 1), at(9, 0, 3)], app="com.whatsapp", orientation=0)
    power = frame([at(8, 59), at(9, 0, 2), at(9, 0, 2.5), at(9, 5)],
                  event=["screen_on", "screen_off", "screen_on", "screen_off"])
    r = hour_row(summarize_taps(taps, power), 9)
    assert r["hourly_intertap_max"] == 1 and r["hourly_intertap_min"] == 1


def test_group_counts():
    game = next(p for p, g in default_mapping().items() if g.value == "games")
    taps = frame([at(9, 0, i) for i in range(8)], app=["com.whatsapp"] * 5 + [game] * 3, orientation=0)
    d = summarize_taps(taps, None).daily.iloc[0]
    assert d["daily_n_taps_in_social_messenger"] == 5 and d["daily_n_taps_in_games"] == 3
    assert d["daily_n_unique_apps"] == 2


@pytest.mark.parametrize("pkg,group", [("com.whatsapp", "social messenger"),
                                       ("com.android.settings", "android system"),
                                       ("com.unknown.foo", "android system")])
def test_app_grouper(pkg, group):
    assert classify_app(None, pkg).value == group


def test_seven_groups_in_mapping():
    assert len({g for g in default_mapping().values()}) == 7


# --- communication ---------------------------------------------------------------------

def _msgs(rows):
    ts = [at(10, i) for i in range(len(rows))]
    return frame(ts, direction=[r[0] for r in rows], contact=[r[1] for r in rows], length=5, type="text")


def test_both_directions_same_contact():
    d = summarize_sociability_msgs_daily(_msgs([("incoming", "A"), ("incoming", "A"), ("outgoing", "A")])).daily
    r = d.iloc[0]
    assert r["daily_n_contacts_both"] == 1 and r["daily_n_contacts_only_received"] == 0
    assert r["daily_n_contacts_only_sent"] == 0


def test_one_way_contacts():
    r = summarize_sociability_msgs_daily(_msgs([("incoming", "A"), ("outgoing", "B")])).daily.iloc[0]
    assert (r["daily_n_contacts_only_received"], r["daily_n_contacts_only_sent"], r["daily_n_contacts_both"]) == (
        1, 1, 0)


def test_sms_has_seven_columns():
    d = summarize_sms_daily(_msgs([("incoming", "A")]).drop(columns="type")).daily
    assert len(d.columns) == 1 + 7


def _calls(rows):
    ts = [at(11, i) for i in range(len(rows))]
    return frame(ts, direction=[r[0] for r in rows], contact=[r[1] for r in rows],
                 duration_s=[r[2] for r in rows], type="voice")


def test_people_talked():
    assert summarize_calllog_daily(_calls([("incoming", "A", 120)])).daily.iloc[0]["daily_n_people_talked"] == 1
    assert summarize_calllog_daily(_calls([("missed", "A", 0)])).daily.iloc[0]["daily_n_people_talked"] == 0
