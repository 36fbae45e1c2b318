"""Wearable-cloud download client.

Polls the intraday heart, steps and sleep series of one participant-day,
refreshes the access token at most once per poll, and stores each series as
an encrypted raw upload with a metadata sidecar.
"""

from __future__ import annotations

import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pyarrow as pa
import requests

from ..config import StudyConfig
from ..crypto import encrypt_chunk
from ..schemas import MS_PER_DAY, FeatureKind, date_to_day, to_csv_bytes
from ..store import Registry, StudyLayout, atomic_write, write_meta
from .mockserver import SERIES_KINDS

logger = logging.getLogger(__name__)

_REGISTRY_LOCK = threading.Lock()


class SyncError(Exception):
    pass


class NetworkError(SyncError):
    """Transport failure or server error; safe to retry later."""


class AuthPermanentFailure(SyncError):
    """The refresh grant was rejected or the fresh token was refused too."""


class PartialDay(SyncError):
    def __init__(self, missing):
        super().__init__(f"missing series: {', '.join(missing)}")
        self.missing = list(missing)


class _Unauthorized(Exception):
    pass


@dataclass(frozen=True)
class TokenSet:
    access_token: str
    refresh_token: str
    expires_at: int  # epoch seconds

    def expired(self, now: float) -> bool:
        return now >= self.expires_at

    def to_dict(self) -> dict:
        return {"access_token": self.access_token, "refresh_token": self.refresh_token,
                "expires_at": int(self.expires_at)}

    @classmethod
    def from_dict(cls, d: dict) -> "TokenSet":
        return cls(d["access_token"], d["refresh_token"], int(d["expires_at"]))


@dataclass
class IntradaySeries:
    kind: str
    date: str
    tz_offset: int
    samples: list  # (offset_s, value) or (offset_s, level, seconds) for sleep

    def __len__(self):
        return len(self.samples)

    def validate(self) -> None:
        off = [s[0] for s in self.samples]
        if any(b <= a for a, b in zip(off, off[1:])):
            raise ValueError(f"{self.kind} {self.date}: offsets not strictly increasing")


@dataclass
class PollResult:
    participant: str
    date: str
    series: dict[str, IntradaySeries]
    refreshes: int = 0
    missing: list[str] = field(default_factory=list)
    written: list[str] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.missing)


class WearableClient:
    def __init__(self, base_url: str, session: requests.Session | None = None, timeout: float = 10.0,
                 retries: int = 2, backoff_s: float = 0.5, clock=time.time):
        self.base = base_url.rstrip("/")
        self.session = session or requests.Session()
        self.timeout = timeout
        self.retries = retries
        self.backoff_s = backoff_s
        self.clock = clock

    def _request(self, method: str, url: str, **kw) -> requests.Response:
        last = None
        for attempt in range(self.retries + 1):
            try:
                r = self.session.request(method, url, timeout=self.timeout, **kw)
            except requests.RequestException as exc:
                last = f"{type(exc).__name__}: {exc}"
            else:
                if r.status_code < 500:
                    return r
                last = f"HTTP {r.status_code}"
            if attempt < self.retries and self.backoff_s:
                time.sleep(self.backoff_s * 2 ** attempt)
        raise NetworkError(f"{method} {url}: {last}")

    def fetch(self, pid: str, kind: str, date: str, tokens: TokenSet) -> dict:
        url = f"{self.base}/1/user/{pid}/{kind}/date/{date}.json"
        r = self._request("GET", url, headers={"Authorization": f"Bearer {tokens.access_token}"})
        if r.status_code == 401:
            raise _Unauthorized(r.text)
        if r.status_code != 200:
            raise SyncError(f"GET {url}: HTTP {r.status_code}")
        return r.json()

    def refresh(self, tokens: TokenSet) -> TokenSet:
        r = self._request("POST", f"{self.base}/oauth/token",
                          data={"grant_type": "refresh_token", "refresh_token": tokens.refresh_token})
        if r.status_code != 200:
            raise AuthPermanentFailure(f"refresh rejected: HTTP {r.status_code}")
        return TokenSet.from_dict(r.json())


def series_table(s: IntradaySeries) -> pa.Table:
    """Raw upload table with UTC millisecond timestamps."""
    midnight_ms = date_to_day(s.date) * MS_PER_DAY - s.tz_offset * 60_000
    off = np.array([r[0] for r in s.samples], dtype="int64")
    data = {"timestamp": midnight_ms + off * 1000, "tz_offset": np.full(len(off), s.tz_offset, dtype="int64")}
    if s.kind == "heart":
        data["bpm"] = np.array([r[1] for r in s.samples], dtype="int64")
    elif s.kind == "steps":
        data["steps"] = np.array([r[1] for r in s.samples], dtype="int64")
    else:
        data["stage"] = pa.array([str(r[1]) for r in s.samples], type=pa.string())
        data["duration_s"] = np.array([r[2] for r in s.samples], dtype="int64")
    return pa.table(data)


def _meta(s: IntradaySeries, table: pa.Table, downloaded_ms: int) -> dict:
    ts = table.column("timestamp").to_numpy()
    m = {"kind": s.kind, "rows": len(table), "date": s.date, "uploaded_at": int(downloaded_ms),
         "first_ts": int(ts.min()), "last_ts": int(ts.max()), "source": "wearsync"}
    if s.kind == "heart":
        m["samples"] = len(table)
    if s.kind == "sleep":
        asleep = [(r[0] + r[2]) for r in s.samples if r[1] != "awake"]
        if asleep:
            midnight_ms = date_to_day(s.date) * MS_PER_DAY - s.tz_offset * 60_000
            m["last_wake_ts"] = int(midnight_ms + max(asleep) * 1000)
    return m


def store_series(layout: StudyLayout, pid: str, pub: bytes, s: IntradaySeries, downloaded_ms: int,
                 cfg: StudyConfig | None = None) -> str:
    """Encrypt and store one series. The path depends only on participant, kind and
    day, so a repeated download replaces the earlier file atomically."""
    cfg = cfg or StudyConfig()
    table = series_table(s)
    stamp = (date_to_day(s.date) + 1) * MS_PER_DAY - s.tz_offset * 60_000
    path = layout.raw_file(pid, FeatureKind(s.kind), stamp)
    atomic_write(path, encrypt_chunk(to_csv_bytes(table), pub, compress=cfg.compress, level=cfg.compress_level))
    write_meta(path, _meta(s, table, downloaded_ms))
    return str(path)


def _save_tokens(layout: StudyLayout, registry: Registry, pid: str, tokens: TokenSet) -> None:
    with _REGISTRY_LOCK:
        registry.get(pid).tokens = tokens.to_dict()
        registry.save(layout)


def poll_participant(client: WearableClient, layout: StudyLayout, registry: Registry, pid: str, date: str,
                     cfg: StudyConfig | None = None, raise_partial: bool = False) -> PollResult:
    """Download and store heart, steps and sleep for one participant-day.

    An expired or refused access token is refreshed once; a second refusal
    raises AuthPermanentFailure. Empty series are reported in
    ``result.missing`` while the present ones are still stored; with
    ``raise_partial`` a PartialDay is raised after storing them.
    """
    p = registry.get(pid)
    if not p.tokens:
        raise AuthPermanentFailure(f"{pid}: no tokens on record")
    tokens = TokenSet.from_dict(p.tokens)
    res = PollResult(pid, date, {})

    def refresh():
        nonlocal tokens
        if res.refreshes:
            raise AuthPermanentFailure(f"{pid}: token refused after refresh")
        tokens = client.refresh(tokens)
        res.refreshes += 1
        _save_tokens(layout, registry, pid, tokens)

    if tokens.expired(client.clock()):
        refresh()
    bodies = {}
    for kind in SERIES_KINDS:
        try:
            bodies[kind] = client.fetch(pid, kind, date, tokens)
        except _Unauthorized:
            refresh()
            try:
                bodies[kind] = client.fetch(pid, kind, date, tokens)
            except _Unauthorized:
                raise AuthPermanentFailure(f"{pid}: token refused after refresh") from None
    downloaded = int(client.clock() * 1000)
    for kind in SERIES_KINDS:
        b = bodies[kind]
        s = IntradaySeries(kind, date, int(b.get("tz_offset", p.tz_offset_min)), [tuple(r) for r in b["dataset"]])
        if not s.samples:
            res.missing.append(kind)
            continue
        s.validate()
        res.series[kind] = s
        res.written.append(store_series(layout, pid, p.pub, s, downloaded, cfg))
    if raise_partial and res.missing:
        raise PartialDay(res.missing)
    return res


def poll_all(client: WearableClient, layout: StudyLayout, registry: Registry, dates: list[str],
             cfg: StudyConfig | None = None, jobs: int = 4) -> list[PollResult | SyncError]:
    """Poll every registered participant for ``dates``; one failing participant does not stop the rest."""

    def one(pid):
        out = []
        for d in dates:
            try:
                out.append(poll_participant(client, layout, registry, pid, d, cfg))
            except SyncError as exc:
                logger.warning("sync %s %s: %s", pid, d, exc)
                out.append(exc)
                if isinstance(exc, AuthPermanentFailure):
                    break
        return out

    pids = list(registry)
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as ex:
        results = list(ex.map(one, pids))
    return [r for rs in results for r in rs]
