import io
import json
import shutil

import numpy as np
import pandas as pd
import pyarrow as pa
import pytest
import requests

from phenopipe.crypto import decrypt_chunk
from phenopipe.schemas import date_to_day
from phenopipe.store import Registry, StudyLayout, load_private_key
from phenopipe.synthgen import generate
from phenopipe.wearsync import (AuthPermanentFailure, MockServer, NetworkError, PartialDay, WearableClient, client,
                                poll_all, poll_participant, write_fixture_day)

NOW = 1_600_000_000.0
DATES = ["2020-02-03", "2020-02-04"]
FULL_DAY = "2020-02-10"


def clock():
    return NOW


@pytest.fixture(scope="module")
def source(tmp_path_factory):
    base = tmp_path_factory.mktemp("sync-src")
    info = generate(base / "root", participants=2, days=2, seed=3, lockdown_day=None, start_date=DATES[0],
                    fixtures_dir=base / "fixtures")
    # a day with the band worn around the clock
    midnight = date_to_day(FULL_DAY) * 86400 - 480 * 60
    hs = np.arange(0, 86400, 5)
    ms = np.arange(0, 86400, 60)
    write_fixture_day(base / "fixtures", info["participants"][0], FULL_DAY, 480, {
        "heart": pa.table({"timestamp": midnight + hs, "bpm": 60 + hs % 7}),
        "steps": pa.table({"timestamp": midnight + ms, "steps": ms % 13}),
        "sleep": pa.table({"timestamp": [midnight - 3600], "stage": ["light"], "duration_s": [8 * 3600]}),
    })
    return base, info


@pytest.fixture
def study(source, tmp_path):
    """A copy of the generated study with its raw uploads removed."""
    base, info = source
    root = tmp_path / "root"
    shutil.copytree(base / "root", root)
    layout = StudyLayout(root, info["study"])
    shutil.rmtree(layout.raw)
    return layout, Registry.load(layout), info["participants"]


@pytest.fixture
def server(source):
    with MockServer(source[0] / "fixtures", clock=clock) as srv:
        yield srv


def api(server):
    return WearableClient(server.url, clock=clock, backoff_s=0)


def store_snapshot(layout):
    """Decrypted raw payloads and metadata sidecars keyed by relative path."""
    out = {}
    for pid, _, path in layout.raw_files():
        out[str(path.relative_to(layout.root))] = decrypt_chunk(path.read_bytes(), load_private_key(layout, pid))
    for meta in layout.raw.rglob("*.meta.json"):
        out[str(meta.relative_to(layout.root))] = meta.read_bytes()
    return out


def test_full_day_series(server, study):
    layout, reg, pids = study
    res = poll_participant(api(server), layout, reg, pids[0], FULL_DAY)
    assert res.refreshes == 0 and not res.partial
    assert set(res.series) == {"heart", "steps", "sleep"}
    heart = res.series["heart"]
    assert len(heart) == 17280
    assert all(b[0] - a[0] == 5 for a, b in zip(heart.samples, heart.samples[1:]))
    assert len(res.series["steps"]) == 1440
    assert len(res.written) == 3
    key = load_private_key(layout, pids[0])
    rows = {k.value: pd.read_csv(io.BytesIO(decrypt_chunk(p.read_bytes(), key))) for _, k, p in layout.raw_files()}
    assert len(rows["heart"]) == 17280 and len(rows["steps"]) == 1440 and len(rows["sleep"]) == 1
    t0 = date_to_day(FULL_DAY) * 86_400_000 - 480 * 60_000
    assert rows["heart"]["timestamp"].iloc[0] == t0 and rows["heart"]["bpm"].iloc[1] == 65


def test_expired_token_refreshed_once(server, study):
    layout, reg, pids = study
    server.expire_all()
    before = server.stats
    res = poll_participant(api(server), layout, reg, pids[0], DATES[0])
    assert res.refreshes == 1 and not res.partial
    assert server.stats["refresh"] - before["refresh"] == 1
    # the new tokens are persisted and work without another refresh
    assert Registry.load(layout).get(pids[0]).tokens == reg.get(pids[0]).tokens
    res2 = poll_participant(api(server), layout, Registry.load(layout), pids[0], DATES[1])
    assert res2.refreshes == 0 and server.stats["refresh"] - before["refresh"] == 1


def test_locally_expired_token_refreshed_before_use(server, study):
    layout, reg, pids = study
    p = reg.get(pids[1])
    p.tokens = dict(p.tokens, expires_at=int(NOW) - 1)
    before = server.stats
    res = poll_participant(api(server), layout, reg, pids[1], DATES[0])
    assert res.refreshes == 1
    assert server.stats["unauthorized"] == before["unauthorized"]


def test_rejected_refresh_is_permanent(server, study):
    layout, reg, pids = study
    p = reg.get(pids[0])
    p.tokens = dict(p.tokens, refresh_token="bogus")
    server.expire_all()
    with pytest.raises(AuthPermanentFailure):
        poll_participant(api(server), layout, reg, pids[0], DATES[0])


def test_kill_and_rerun_matches_clean_run(server, study, tmp_path, monkeypatch, source):
    layout, reg, pids = study
    clean_root = tmp_path / "clean"
    shutil.copytree(layout.root, clean_root)
    clean = StudyLayout(clean_root, layout.study)
    poll_all(api(server), clean, Registry.load(clean), DATES, jobs=1)

    real = client.store_series
    calls = {"n": 0}

    def dying(*a, **kw):
        calls["n"] += 1
        if calls["n"] == 4:
            # leave a half-written temp file behind, as a hard kill would
            out = layout.raw_file(pids[0], "heart", "x").parent
            out.mkdir(parents=True, exist_ok=True)
            (out / ".tmp-crash").write_bytes(b"\x00garbage")
            raise KeyboardInterrupt
        return real(*a, **kw)

    monkeypatch.setattr(client, "store_series", dying)
    with pytest.raises(KeyboardInterrupt):
        poll_all(api(server), layout, reg, DATES, jobs=1)
    monkeypatch.setattr(client, "store_series", real)
    poll_all(api(server), layout, Registry.load(layout), DATES, jobs=1)

    got, want = store_snapshot(layout), store_snapshot(clean)
    assert len(want) == 2 * 2 * 3 * 2  # participants x days x series x (payload, sidecar)
    assert got == want


def test_partial_day_keeps_present_series(server, study):
    layout, reg, pids = study
    server.drop_series(pids[0], "sleep", DATES[1])
    res = poll_participant(api(server), layout, reg, pids[0], DATES[1])
    assert res.partial and res.missing == ["sleep"] and set(res.series) == {"heart", "steps"}
    with pytest.raises(PartialDay) as err:
        poll_participant(api(server), layout, reg, pids[0], DATES[1], raise_partial=True)
    assert err.value.missing == ["sleep"]
    kinds = sorted(k.value for _, k, _ in layout.raw_files(pids[0]))
    assert kinds == ["heart", "steps"]


def test_server_errors_retried_then_reported(server, study):
    layout, reg, pids = study
    server.fail_next(503)
    res = poll_participant(api(server), layout, reg, pids[0], DATES[0])
    assert not res.partial
    server.fail_next(503, 503, 503)
    with pytest.raises(NetworkError):
        poll_participant(api(server), layout, reg, pids[0], DATES[0])


def test_one_failing_participant_does_not_stop_others(server, study):
    layout, reg, pids = study
    p = reg.get(pids[0])
    p.tokens = dict(p.tokens, access_token="nope", refresh_token="nope")
    out = poll_all(api(server), layout, reg, DATES, jobs=2)
    assert sum(isinstance(r, AuthPermanentFailure) for r in out) == 1
    assert sum(not isinstance(r, Exception) for r in out) == 2


# --- server contract ------------------------------------------------------------------------

def test_unknown_user_404(server, source):
    tok = json.loads((source[0] / "fixtures" / "tokens.json").read_text())
    access = next(iter(tok.values()))["access_token"]
    r = requests.get(f"{server.url}/1/user/nobody/heart/date/{DATES[0]}.json",
                     headers={"Authorization": f"Bearer {access}"})
    assert r.status_code == 404


def test_bad_refresh_400(server):
    r = requests.post(f"{server.url}/oauth/token", data={"grant_type": "refresh_token", "refresh_token": "x"})
    assert r.status_code == 400


def test_identical_gets_identical_bodies(server, source):
    pid, t = next(iter(json.loads((source[0] / "fixtures" / "tokens.json").read_text()).items()))
    url = f"{server.url}/1/user/{pid}/steps/date/{DATES[0]}.json"
    h = {"Authorization": f"Bearer {t['access_token']}"}
    a, b = requests.get(url, headers=h), requests.get(url, headers=h)
    assert a.status_code == 200 and a.content == b.content
    assert requests.get(url).status_code == 401
