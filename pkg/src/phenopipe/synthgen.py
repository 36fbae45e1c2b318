"""Deterministic synthetic participants for all 13 raw feature kinds.

Each (participant, day) draws from its own generator seeded with
``[seed, participant, day]``, so output does not depend on scheduling and a
later regime switch never perturbs earlier days. Raw files are written in the
encrypted study layout with plaintext metadata sidecars.

Regimes: ``lockdown`` from a switch day (less walking and travel, more time
at home, fewer apps and incoming calls, more entertainment, dimmer days,
slightly worse sleep) and ``relapse`` (short, fragmented sleep; fewer
messages; staying in).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pyarrow as pa

from .config import StudyConfig, save_config
from .crypto import encrypt_chunk
from .features.apps import AppGroup, default_mapping
from .privacy import M_PER_DEG, hash_contact, obfuscate_gps
from .schemas import PAYLOAD, FeatureKind, MS_PER_DAY, date_to_day, day_to_date, to_csv_bytes
from .store import Registry, StudyLayout, atomic_write, enroll, write_meta
from .wearsync.mockserver import initial_tokens, write_fixture_day, write_tokens

logger = logging.getLogger(__name__)

K = FeatureKind
_NP = {"int": "int64", "float": "float64"}
DEFAULT_START = "2020-02-22"
WEARABLE_SECONDS = True  # the wearable export reports epoch seconds; stage 2 patches them


@dataclass
class Regime:
    steps: float = 1.0
    hometime: float = 1.0  # multiplier on minutes at home
    siglocs: float = 1.0
    apps: float = 1.0
    entertainment_taps: float = 1.0
    max_light: float = 1.0
    incoming_calls: float = 1.0
    sleep_eff_delta: float = 0.0
    sleep_hours_delta: float = 0.0
    messages: float = 1.0


LOCKDOWN = Regime(steps=0.65, hometime=1.25, siglocs=0.85, apps=0.85, entertainment_taps=1.30,
                  max_light=0.70, incoming_calls=0.50, sleep_eff_delta=-0.01)
RELAPSE = Regime(steps=0.5, hometime=1.3, siglocs=0.7, apps=0.8, incoming_calls=0.4, sleep_eff_delta=-0.12,
                 sleep_hours_delta=-2.5, messages=0.3)


def apply_lockdown(profile: "BehaviorProfile", day: int) -> "BehaviorProfile":
    """Profile with the stay-at-home regime from ``day`` (index from study start) onwards."""
    return replace(profile, switch_day=day, switched=LOCKDOWN)


@dataclass
class BehaviorProfile:
    index: int
    seed: int
    home: tuple[float, float]
    work: tuple[float, float]
    leisure: list
    bedtime_h: float
    sleep_h: float
    efficiency: float
    steps_base: float
    rest_hr: float
    contacts: list
    apps: dict  # group -> list of packages
    n_apps: int
    msg_rate: float
    wear_prob: float
    phone_off_prob: float
    switch_day: int | None = None
    switched: Regime = field(default_factory=Regime)

    def regime(self, d: int) -> Regime:
        if self.switch_day is not None and d >= self.switch_day:
            return self.switched
        return Regime()


def _apps_by_group():
    out: dict[str, list] = {}
    for pkg, g in sorted(default_mapping().items()):
        out.setdefault(g.value, []).append(pkg)
    return out


def make_profile(seed: int, index: int, ref_lat: float = 1.35) -> BehaviorProfile:
    rng = np.random.default_rng([seed, index, 10**6])

    def around(lat, lon, lo_m, hi_m):
        r = rng.uniform(lo_m, hi_m)
        a = rng.uniform(0, 2 * np.pi)
        return (lat + r * np.sin(a) / M_PER_DEG, lon + r * np.cos(a) / (M_PER_DEG * np.cos(np.radians(ref_lat))))

    home = (rng.uniform(1.30, 1.42), rng.uniform(103.70, 103.95))
    work = around(*home, 3000, 12000)
    leisure = [around(*home, 800, 8000) for _ in range(3)]
    contacts = [f"+65 {rng.integers(80000000, 99999999)}" for _ in range(int(rng.integers(12, 30)))]
    groups = _apps_by_group()
    return BehaviorProfile(
        index=index, seed=seed, home=home, work=work, leisure=leisure,
        bedtime_h=rng.normal(23.4, 0.4), sleep_h=rng.uniform(7.2, 8.8), efficiency=rng.uniform(0.91, 0.95),
        steps_base=rng.uniform(3500, 8000), rest_hr=rng.uniform(58, 72), contacts=contacts,
        apps=groups, n_apps=int(rng.integers(14, 20)), msg_rate=rng.uniform(25, 60),
        wear_prob=0.95, phone_off_prob=0.04,
    )


# --- per-day generators (local seconds from local midnight) -----------------------------

@dataclass
class DayPlan:
    worn: np.ndarray  # 1440 bool
    asleep: tuple[float, float]  # local seconds of main sleep (relative to midnight, may start < 0)
    stays: list  # (lat, lon, start_s, end_s, is_home)
    away: np.ndarray  # 1440 bool, outside home
    phone_off: tuple[float, float] | None
    sessions: list  # (start_s, end_s)


def _plan(p: BehaviorProfile, d: int, rng, weekday: int) -> DayPlan:
    reg = p.regime(d)
    # last night's sleep ends this morning
    bed = p.bedtime_h - 24 + rng.normal(0, 0.35)
    dur = max(3.0, p.sleep_h + reg.sleep_hours_delta + rng.normal(0, 0.5))
    wake = bed + dur
    asleep = (bed * 3600.0, wake * 3600.0)

    # itinerary: home until leaving, destinations, home again
    day_start = wake + rng.uniform(0.5, 1.5)
    working = weekday < 5
    if working:
        out_h, back_h = 8.5 + rng.normal(0, 0.3), 18.5 + rng.normal(0, 0.5)
        dests = [p.work] + ([p.leisure[int(rng.integers(3))]] if rng.random() < 0.3 else [])
    else:
        out_h = 10.5 + rng.normal(0, 0.8)
        back_h = out_h + rng.uniform(3.0, 6.0)
        dests = [p.leisure[i] for i in rng.choice(3, size=int(rng.integers(1, 3)), replace=False)]
    out_h = max(out_h, day_start)
    away_h = max(0.0, back_h - out_h)
    if reg.hometime != 1.0:
        home_h = 24.0 - away_h
        away_h = max(0.0, 24.0 - min(24.0, home_h * reg.hometime))
        n = max(1, int(round(len(dests) * reg.siglocs - rng.random() * 0.3)))
        dests = [p.leisure[int(rng.integers(3))]][:n] if away_h < 3 else dests[:n]
    stays = []
    t = 0.0
    if away_h > 0.25:
        leave = out_h * 3600.0
        ret = leave + away_h * 3600.0
        stays.append((*p.home, 0.0, leave, True))
        travel = 1200.0
        span = (ret - leave - travel * (len(dests) + 1)) / len(dests)
        t = leave + travel
        for dest in dests:
            stays.append((*dest, t, t + max(span, 600.0), False))
            t += max(span, 600.0) + travel
        stays.append((*p.home, t, 86400.0, True))
    else:
        stays.append((*p.home, 0.0, 86400.0, True))

    away = np.ones(1440, dtype=bool)
    for lat, lon, s, e, is_home in stays:
        if is_home:
            away[int(s // 60):int(np.ceil(e / 60))] = False

    worn = np.ones(1440, dtype=bool)
    charge = int(rng.integers(18 * 60, 21 * 60))
    worn[charge:charge + 45] = False
    if rng.random() > p.wear_prob:
        worn[: int(max(0, wake) * 60) + 30] = False  # not worn to bed last night

    phone_off = None
    if rng.random() < p.phone_off_prob:
        phone_off = (3600.0, 6 * 3600.0)

    sessions = []
    t = max(0.0, wake * 3600.0) + rng.uniform(60, 900)
    end_day = min(86400.0 - 60, (p.bedtime_h + 0.2) * 3600.0)
    while t < end_day:
        length = float(np.clip(rng.lognormal(np.log(150), 0.9), 10, 3600))
        if phone_off is None or not (phone_off[0] <= t < phone_off[1]):
            sessions.append((t, min(t + length, 86399.0)))
        t += length + rng.exponential(900)
    return DayPlan(worn, asleep, stays, away, phone_off, sessions)


def _steps(p, d, rng, plan: DayPlan, reg: Regime) -> np.ndarray:
    target = p.steps_base * reg.steps * rng.lognormal(0, 0.25)
    m = np.zeros(1440, dtype="int64")
    lo = int(max(0.0, plan.asleep[1]) // 60) + 20
    hi = 22 * 60
    awake = np.arange(lo, hi)
    idle = rng.random(len(awake)) < 0.25
    m[awake[idle]] = rng.integers(1, 9, size=int(idle.sum()))
    # commutes and errands as walking bouts
    total = m.sum()
    while total < target:
        length = int(rng.integers(3, 25))
        start = int(rng.integers(lo, max(lo + 1, hi - length)))
        bout = np.clip(rng.normal(95, 15, size=length), 10, 160).astype("int64")
        m[start:start + length] = bout
        total = m.sum()
    m[~plan.worn] = 0
    sl, wk = plan.asleep
    m[max(0, int(sl // 60)):max(0, int(wk // 60))] = 0
    return m


def _heart(p, rng, plan: DayPlan, steps_min: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    t = np.arange(0, 86400, 5)
    minute = t // 60
    keep = plan.worn[minute]
    base = p.rest_hr + 10 + 4 * np.sin((t / 86400.0 - 0.3) * 2 * np.pi)
    sl, wk = plan.asleep
    sleeping = (t >= sl) & (t < wk)
    base = np.where(sleeping, p.rest_hr - 4, base)
    base = base + np.minimum(steps_min[minute], 130) * 0.35
    walk = np.cumsum(rng.normal(0, 0.6, size=len(t)))
    walk -= np.convolve(walk, np.ones(121) / 121, mode="same")
    bpm = np.clip(np.round(base + walk + rng.normal(0, 1.5, size=len(t))), 40, 190).astype("int64")
    return t[keep], bpm[keep]


def _sleep_segments(p, rng, plan: DayPlan, reg: Regime):
    """Hypnogram of last night as (start_s, stage, duration_s); durations on a 30 s grid."""
    sl, wk = plan.asleep
    total = int((wk - sl) // 30) * 30
    eff = float(np.clip(p.efficiency + reg.sleep_eff_delta + rng.normal(0, 0.012), 0.5, 0.995))
    awake_total = int(round(total * (1 - eff) / 30)) * 30
    lead = int(round(awake_total * rng.uniform(0.2, 0.4) / 30)) * 30
    trail = int(round(awake_total * rng.uniform(0.05, 0.15) / 30)) * 30
    mid_awake = max(0, awake_total - lead - trail)
    body = total - awake_total
    segs = []
    t = sl
    if lead:
        segs.append((t, "awake", lead))
        t += lead
    n_wakes = max(1, mid_awake // 300)
    wake_parts = np.full(n_wakes, mid_awake // 30 // n_wakes * 30)
    wake_parts[0] += mid_awake - wake_parts.sum()
    cut = np.sort(rng.choice(np.arange(1, max(2, body // 30)), size=min(n_wakes, max(1, body // 30 - 1)),
                             replace=False)) * 30
    pieces = np.diff(np.concatenate(([0], cut, [body])))
    cycle = ("light", "deep", "light", "rem")
    for i, piece in enumerate(pieces):
        rest = int(piece)
        j = int(rng.integers(4))
        while rest > 0:
            s = min(rest, int(rng.integers(10, 50)) * 30)
            segs.append((t, cycle[j % 4], s))
            t += s
            rest -= s
            j += 1
        if i < len(wake_parts) and wake_parts[i] > 0 and i < len(pieces) - 1:
            segs.append((t, "awake", int(wake_parts[i])))
            t += int(wake_parts[i])
    if trail:
        segs.append((t, "awake", trail))
    return segs


def _gps(p, rng, plan: DayPlan):
    """Fixes: every 600 s while staying, every 60 s while moving."""
    rows = []
    prev = None
    for lat, lon, s, e, _ in plan.stays:
        if prev is not None:
            plat, plon, pe = prev
            n = max(1, int((s - pe) // 60))
            for k in range(1, n):
                f = k / n
                rows.append((pe + k * 60.0, plat + (lat - plat) * f, plon + (lon - plon) * f))
        t = s + rng.uniform(0, 60)
        while t < e:
            rows.append((t, lat + rng.normal(0, 6) / M_PER_DEG, lon + rng.normal(0, 6) / M_PER_DEG))
            t += 600.0
        prev = (lat, lon, e)
    rows = [r for r in rows if r[0] < 86400 and not (plan.phone_off and plan.phone_off[0] <= r[0] < plan.phone_off[1])]
    return np.array(rows).reshape(-1, 3)


def _light(p, rng, plan: DayPlan, reg: Regime):
    t = np.arange(0, 86400, 300) + rng.uniform(0, 5)
    minute = (t // 60).astype(int)
    hour = t / 3600.0
    daylight = np.clip(np.sin((hour - 7) / 12 * np.pi), 0, None)
    indoor = rng.uniform(80, 400) * (hour > plan.asleep[1] / 3600.0) * (hour < 23)
    outdoor = plan.away[minute] * daylight * rng.lognormal(np.log(8000), 0.6, size=len(t))
    lux = (indoor + outdoor * reg.max_light) * rng.uniform(0.8, 1.2, size=len(t)) + rng.uniform(0, 3, size=len(t))
    lux = np.round(lux, 2)
    if rng.random() < 0.02:
        lux[int(rng.integers(len(lux)))] = 1e15  # sensor saturation on some phones
    keep = np.ones(len(t), dtype=bool)
    if plan.phone_off:
        keep &= ~((t >= plan.phone_off[0]) & (t < plan.phone_off[1]))
    return t[keep], lux[keep]


def _accel(p, rng, plan: DayPlan):
    starts = np.arange(0, 86400, 600) + rng.uniform(0, 30)
    if plan.phone_off:
        starts = starts[~((starts >= plan.phone_off[0]) & (starts < plan.phone_off[1]))]
    n = 20
    t = (starts[:, None] + np.arange(n)[None, :] * 0.1).ravel()
    active = plan.away[(t // 60).astype(int) % 1440]
    amp = np.where(active, 1.2, 0.3)
    xyz = rng.normal(0, 1, size=(len(t), 3)) * amp[:, None]
    xyz[:, 2] += 9.81
    return t, np.round(xyz, 4)


def _day_apps(p, rng, reg: Regime):
    k = max(3, int(round(p.n_apps * reg.apps)))
    weights = {AppGroup.social_messenger.value: 3, AppGroup.social_media.value: 3, AppGroup.entertainment.value: 2,
               AppGroup.map_navigation.value: 1, AppGroup.utility_tools.value: 2, AppGroup.games.value: 1,
               AppGroup.android_system.value: 2}
    pool, w = [], []
    for g, pkgs in p.apps.items():
        pref = pkgs[: 6]
        pool += pref
        w += [weights[g]] * len(pref)
    w = np.asarray(w, float)
    chosen = rng.choice(len(pool), size=min(k, len(pool)), replace=False, p=w / w.sum())
    return [pool[i] for i in sorted(chosen)]


def _power_taps(p, rng, plan: DayPlan, reg: Regime, mapping):
    events = []
    taps = []
    keys = []
    apps = _day_apps(p, rng, reg)
    # every chosen app appears at least once
    app_seq = list(rng.permutation(apps)) + list(rng.choice(apps, size=max(0, len(plan.sessions) - len(apps))))
    for (s, e), app in zip(plan.sessions, app_seq):
        events.append((s, "screen_on"))
        events.append((e, "screen_off"))
        g = mapping.get(app, AppGroup.android_system).value
        rate = 0.2 * (reg.entertainment_taps if g == AppGroup.entertainment.value else 1.0)
        n = rng.poisson(rate * (e - s))
        if n:
            tt = np.sort(rng.uniform(s, e, size=n))
            taps += zip(tt.tolist(), [app] * n, (rng.random(n) < 0.1).astype(int).tolist())
        if g == AppGroup.social_messenger.value:
            m = rng.poisson(0.4 * (e - s))
            tt = np.sort(rng.uniform(s, e, size=m))
            tok = rng.choice(["alphabetic", "numeric", "punctuation", "DELETE", "space", "enter", "tap"], size=m,
                             p=[0.62, 0.04, 0.05, 0.08, 0.14, 0.02, 0.05])
            keys += zip(tt.tolist(), tok.tolist(), [app] * m)
    if rng.random() < 0.3:
        x = float(rng.uniform(9 * 3600, 20 * 3600))
        events += [(x, "idle_on"), (x + 600, "idle_off")]
    if plan.phone_off:
        events += [(plan.phone_off[0], "power_off"), (plan.phone_off[1], "power_on")]
    events.sort(key=lambda r: (r[0], r[1]))
    return events, taps, keys


def _messages(p, rng, reg: Regime, salt, plan: DayPlan):
    n = rng.poisson(p.msg_rate * reg.messages)
    t = np.sort(rng.uniform(max(0.0, plan.asleep[1]), 23.5 * 3600, size=n))
    favourites = p.contacts[: max(3, len(p.contacts) // 3)]
    who = rng.choice(favourites, size=n)
    rows = []
    for x, c in zip(t, who):
        d = "incoming" if rng.random() < 0.55 else "outgoing"
        typ = "media" if rng.random() < 0.08 else "text"
        rows.append((x, d, hash_contact(salt, c), int(rng.integers(1, 160)), typ))
    return rows


def _calls(rng, contacts, salt, rates, plan: DayPlan, kind_type: str):
    rows = []
    for direction, lam in rates.items():
        for _ in range(rng.poisson(lam)):
            x = float(rng.uniform(max(0.0, plan.asleep[1]) + 1800, 22.5 * 3600))
            dur = 0 if direction == "missed" else int(rng.exponential(150))
            rows.append((x, direction, hash_contact(salt, str(rng.choice(contacts))), dur, kind_type))
    rows.sort()
    return rows


def generate_day(p: BehaviorProfile, d: int, day0: int, salt: bytes, gps_offset, tz_min: int = 480,
                 ref_lat: float = 1.35) -> dict[FeatureKind, pa.Table]:
    """All 13 raw tables for participant-day ``d`` (study day index)."""
    rng = np.random.default_rng([p.seed, p.index, d])
    reg = p.regime(d)
    day = day0 + d
    weekday = int((day + 3) % 7)  # 1970-01-01 was a Thursday
    plan = _plan(p, d, rng, weekday)
    mapping = default_mapping()
    midnight_utc_s = day * 86400 - tz_min * 60

    def ms(local_s):
        return np.round((midnight_utc_s + np.asarray(local_s, float)) * 1000).astype("int64")

    def secs(local_s):
        return (midnight_utc_s + np.floor(np.asarray(local_s, float))).astype("int64")

    def frame(kind, ts, **cols):
        ts = np.asarray(ts, dtype="int64")
        data = {"timestamp": ts, "tz_offset": np.full(len(ts), tz_min, dtype="int64")}
        for k, t in PAYLOAD[kind].items():
            v = cols[k]
            data[k] = pa.array(v, type=pa.string()) if t == "str" else np.asarray(v, dtype=_NP[t])
        return pa.table(data)

    out = {}
    steps = _steps(p, d, rng, plan, reg)
    wts = secs if WEARABLE_SECONDS else ms
    sm = np.flatnonzero(plan.worn | (steps > 0))
    out[K.steps] = frame(K.steps, wts(sm * 60.0), steps=steps[sm])
    ht, bpm = _heart(p, rng, plan, steps)
    out[K.heart] = frame(K.heart, wts(ht), bpm=bpm)
    if plan.worn[: int(max(0, plan.asleep[1]) // 60)].all():
        segs = _sleep_segments(p, rng, plan, reg)
        out[K.sleep] = frame(K.sleep, wts([s[0] for s in segs]), stage=[s[1] for s in segs],
                             duration_s=np.array([s[2] for s in segs], dtype="int64"))
    else:
        out[K.sleep] = frame(K.sleep, np.zeros(0, dtype="int64"), stage=[], duration_s=np.zeros(0, dtype="int64"))

    g = _gps(p, rng, plan)
    lat, lon = obfuscate_gps(gps_offset, g[:, 1], g[:, 2], ref_lat=ref_lat) if len(g) else (g[:, 1], g[:, 2])
    out[K.gps] = frame(K.gps, ms(g[:, 0]), lat=np.round(lat, 7), lon=np.round(lon, 7),
                       accuracy=np.round(rng.uniform(4, 25, size=len(g)), 1))
    lt, lux = _light(p, rng, plan, reg)
    out[K.light] = frame(K.light, ms(lt), lux=lux)
    at, xyz = _accel(p, rng, plan)
    out[K.accel] = frame(K.accel, ms(at), x=xyz[:, 0], y=xyz[:, 1], z=xyz[:, 2])

    def records(kind, rec):
        # rec: (local seconds, *payload in schema order); extra trailing fields are ignored
        cols = list(PAYLOAD[kind])
        return frame(kind, ms([r[0] for r in rec]), **{c: [r[i + 1] for r in rec] for i, c in enumerate(cols)})

    events, taps, keys = _power_taps(p, rng, plan, reg, mapping)
    out[K.powerState] = records(K.powerState, events)
    out[K.tapsLog] = records(K.tapsLog, sorted(taps))
    out[K.accessibilityLog] = records(K.accessibilityLog, sorted(keys))
    out[K.sociabilityLog] = records(K.sociabilityLog, _messages(p, rng, reg, salt, plan))
    voice = {"incoming": 0.9 * reg.messages, "outgoing": 0.6, "missed": 0.2}
    out[K.sociabilityCallLog] = records(K.sociabilityCallLog, _calls(rng, p.contacts, salt, voice, plan, "voice"))
    sim = {"incoming": 1.4 * reg.incoming_calls, "outgoing": 0.8, "missed": 0.3}
    services = [f"+65 6{i:07d}" for i in range(5)]
    out[K.callLog] = records(K.callLog, _calls(rng, p.contacts + services, salt, sim, plan, "sim"))
    out[K.textsLog] = records(K.textsLog, _messages(p, rng, Regime(messages=0.08 * reg.messages), salt, plan))
    if out[K.sleep].num_rows:
        out[K.sleep] = out[K.sleep].replace_schema_metadata(
            {"last_wake_ms": str(int((midnight_utc_s + plan.asleep[1]) * 1000))})
    return out


def _meta(kind: FeatureKind, df: pa.Table, day: int, uploaded_ms: int) -> dict:
    ts = df.column("timestamp").to_numpy()
    scale = 1000 if len(ts) and ts.max() < 10**11 else 1
    m = {"kind": kind.value, "rows": int(len(df)), "date": day_to_date(day), "uploaded_at": int(uploaded_ms),
         "first_ts": int(ts.min() * scale) if len(ts) else None, "last_ts": int(ts.max() * scale) if len(ts) else None}
    if kind is K.heart:
        m["samples"] = int(len(df))
    meta = df.schema.metadata or {}
    if kind is K.sleep and b"last_wake_ms" in meta:
        m["last_wake_ts"] = int(meta[b"last_wake_ms"])
    return m


def write_day(layout: StudyLayout, pid: str, pub: bytes, tables: dict, day: int, tz_min: int, cfg: StudyConfig,
              rng) -> int:
    n = 0
    for kind in sorted(tables, key=lambda k: k.value):
        df = tables[kind]
        # upload lands an hour or two after the local day ends
        uploaded = (day + 1) * MS_PER_DAY - tz_min * 60_000 + int(rng.integers(0, 2 * 3_600_000))
        stamp = (day + 1) * MS_PER_DAY - tz_min * 60_000
        path = layout.raw_file(pid, kind, stamp)
        blob = encrypt_chunk(to_csv_bytes(df), pub, compress=cfg.compress, level=cfg.compress_level)
        atomic_write(path, blob)
        write_meta(path, _meta(kind, df, day, uploaded))
        n += 1
    return n


def generate(root: Path | str, participants: int = 20, days: int = 90, seed: int = 7,
             lockdown_day: int | None = 45, start_date: str = DEFAULT_START, study: str = "study",
             relapse: dict[int, int] | None = None, cfg: StudyConfig | None = None,
             fixtures_dir: Path | str | None = None) -> dict:
    """Create a complete encrypted study under ``root``.

    ``relapse`` maps participant index -> study day from which the relapse
    regime applies. With ``fixtures_dir`` the wearable series are also
    written as mock-server fixtures and every participant gets initial API
    tokens. Returns a summary with participant ids.
    """
    root = Path(root)
    cfg = cfg or StudyConfig(study=study, compress_level=1)
    cfg = replace(cfg, study=study)
    layout = StudyLayout(root, study)
    root.mkdir(parents=True, exist_ok=True)
    save_config(root, cfg)
    registry = Registry.load(layout)
    day0 = date_to_day(start_date)
    id_rng = np.random.default_rng([seed, 424242])
    pids = []
    for i in range(participants):
        prng = np.random.default_rng([seed, i, 777])
        p, kp = enroll(layout, registry, enrollment_date=start_date, rng=id_rng, key_seed=f"{seed}-{i}",
                       tz_offset_min=cfg.tz_offset_min, phone_model=str(prng.choice(["Pixel 3a", "Galaxy A51",
                                                                                    "Redmi Note 8", "Galaxy S10"])),
                       visit_dates=[start_date, day_to_date(day0 + min(days - 1, 28)),
                                    day_to_date(day0 + min(days - 1, 56))])
        prof = make_profile(seed, i, cfg.gps_ref_lat)
        if lockdown_day is not None:
            prof = apply_lockdown(prof, lockdown_day)
        if relapse and i in relapse:
            prof = replace(prof, switch_day=relapse[i], switched=RELAPSE)
        up_rng = np.random.default_rng([seed, i, 999])
        for d in range(days):
            tables = generate_day(prof, d, day0, p.salt, p.gps_offset, p.tz_offset_min, cfg.gps_ref_lat)
            write_day(layout, p.participant_id, kp.public_key, tables, day0 + d, p.tz_offset_min, cfg, up_rng)
            if fixtures_dir is not None:
                write_fixture_day(fixtures_dir, p.participant_id, day_to_date(day0 + d), p.tz_offset_min,
                                  {k.value: t for k, t in tables.items()})
        if fixtures_dir is not None:
            p.tokens = initial_tokens(p.participant_id, seed)
        pids.append(p.participant_id)
    registry.save(layout)
    if fixtures_dir is not None:
        write_tokens(fixtures_dir, {pid: registry.get(pid).tokens for pid in pids})
    return {"root": str(root), "study": study, "participants": pids, "start": start_date, "days": days}
