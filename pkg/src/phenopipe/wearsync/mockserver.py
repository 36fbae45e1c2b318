"""Fixture-backed stand-in for the wearable cloud API.

Fixture directory layout::

    tokens.json                        {pid: {"access_token", "refresh_token", "expires_at"}}
    <pid>/<kind>/<YYYY-MM-DD>.json     one intraday series

Series files hold ``{"user", "kind", "date", "tz_offset", "interval_s",
"dataset"}``. ``dataset`` rows are ``[offset_s, value]`` for heart and steps
and ``[offset_s, level, seconds]`` for sleep, with offsets counted in
seconds from local midnight of ``date`` (sleep may start on the previous
evening, so its offsets can be negative).

Endpoints::

    GET  /1/user/{pid}/{kind}/date/{YYYY-MM-DD}.json   Bearer token required
    POST /oauth/token    grant_type=refresh_token&refresh_token=...
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs

SERIES_KINDS = ("heart", "steps", "sleep")
INTERVAL_S = {"heart": 5, "steps": 60, "sleep": 30}
TOKEN_LIFETIME_S = 8 * 3600
_GET = re.compile(r"^/1/user/([^/]+)/(heart|steps|sleep)/date/(\d{4}-\d\d-\d\d)\.json$")


class MockServerError(OSError):
    pass


def _digest(*parts) -> str:
    return hashlib.sha256("|".join(map(str, parts)).encode()).hexdigest()[:40]


def initial_tokens(pid: str, seed=0, expires_at: int = 4_102_444_800) -> dict:
    return {"access_token": _digest("access", pid, seed), "refresh_token": _digest("refresh", pid, seed),
            "expires_at": int(expires_at)}


def series_json(pid: str, kind: str, date: str, tz_offset: int, dataset: list) -> bytes:
    body = {"user": pid, "kind": kind, "date": date, "tz_offset": int(tz_offset), "interval_s": INTERVAL_S[kind],
            "dataset": dataset}
    return (json.dumps(body, separators=(",", ":"), sort_keys=True) + "\n").encode()


def write_fixture_day(fixture_dir: Path | str, pid: str, date: str, tz_offset: int, tables: dict) -> None:
    """Store the wearable series of one generated day; ``tables`` maps kind -> arrow table
    with UTC timestamps in seconds."""
    from ..schemas import date_to_day

    base = Path(fixture_dir) / pid
    midnight = date_to_day(date) * 86400 - tz_offset * 60
    for kind in SERIES_KINDS:
        t = tables.get(kind)
        if t is None:
            continue
        ts = t.column("timestamp").to_numpy()
        if len(ts) and ts.max() >= 10**11:
            ts = ts // 1000
        off = (ts - midnight).tolist()
        if kind == "heart":
            ds = [list(r) for r in zip(off, t.column("bpm").to_pylist())]
        elif kind == "steps":
            ds = [list(r) for r in zip(off, t.column("steps").to_pylist())]
        else:
            ds = [list(r) for r in zip(off, t.column("stage").to_pylist(), t.column("duration_s").to_pylist())]
        path = base / kind / f"{date}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(series_json(pid, kind, date, tz_offset, ds))


def write_tokens(fixture_dir: Path | str, tokens: dict[str, dict]) -> None:
    path = Path(fixture_dir) / "tokens.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(tokens, indent=1, sort_keys=True) + "\n")


def load_tokens(fixture_dir: Path | str) -> dict[str, dict]:
    path = Path(fixture_dir) / "tokens.json"
    return json.loads(path.read_text()) if path.exists() else {}


class _State:
    def __init__(self, fixture_dir: Path, clock):
        self.dir = fixture_dir
        self.clock = clock
        self.lock = threading.Lock()
        self.access: dict[str, tuple[str, int]] = {}
        self.refresh: dict[str, str] = {}
        self.users: set[str] = set()
        self.stats = {"get": 0, "refresh": 0, "refresh_rejected": 0, "unauthorized": 0}
        self.fail_queue: list[int] = []
        self.drop: set[tuple[str, str, str]] = set()
        for pid, tok in load_tokens(fixture_dir).items():
            self.users.add(pid)
            self.access[tok["access_token"]] = (pid, int(tok["expires_at"]))
            self.refresh[tok["refresh_token"]] = pid
        self.users |= {p.name for p in fixture_dir.iterdir() if p.is_dir()}


def _handler(state: _State):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, *args):  # keep test output quiet
            pass

        def _send(self, code: int, body: bytes, ctype="application/json"):
            self.send_response(code)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _err(self, code: int, msg: str):
            self._send(code, (json.dumps({"error": msg}) + "\n").encode())

        def _injected(self) -> bool:
            with state.lock:
                code = state.fail_queue.pop(0) if state.fail_queue else None
            if code is not None:
                self._err(code, "injected failure")
                return True
            return False

        def do_GET(self):
            if self._injected():
                return
            m = _GET.match(self.path)
            if not m:
                return self._err(404, "no such endpoint")
            pid, kind, date = m.groups()
            if pid not in state.users:
                return self._err(404, "unknown user")
            auth = self.headers.get("Authorization", "")
            token = auth[7:] if auth.startswith("Bearer ") else ""
            with state.lock:
                state.stats["get"] += 1
                owner = state.access.get(token)
                ok = owner is not None and owner[0] == pid and owner[1] > state.clock()
                if not ok:
                    state.stats["unauthorized"] += 1
            if not ok:
                return self._err(401, "expired_token" if owner else "invalid_token")
            path = state.dir / pid / kind / f"{date}.json"
            if (pid, kind, date) in state.drop or not path.exists():
                return self._send(200, series_json(pid, kind, date, 0, []))
            self._send(200, path.read_bytes())

        def do_POST(self):
            if self._injected():
                return
            if self.path != "/oauth/token":
                return self._err(404, "no such endpoint")
            n = int(self.headers.get("Content-Length", "0") or 0)
            form = parse_qs(self.rfile.read(n).decode())
            grant = form.get("grant_type", [""])[0]
            old = form.get("refresh_token", [""])[0]
            with state.lock:
                state.stats["refresh"] += 1
                pid = state.refresh.get(old) if grant == "refresh_token" else None
                if pid is None:
                    state.stats["refresh_rejected"] += 1
                else:
                    # refresh tokens are single use
                    del state.refresh[old]
                    access, new_refresh = _digest("access", old), _digest("refresh", old)
                    expires = int(state.clock()) + TOKEN_LIFETIME_S
                    state.access[access] = (pid, expires)
                    state.refresh[new_refresh] = pid
            if pid is None:
                return self._err(400, "invalid_grant")
            body = {"access_token": access, "refresh_token": new_refresh, "expires_at": expires, "user_id": pid}
            self._send(200, (json.dumps(body, sort_keys=True) + "\n").encode())

    return Handler


class MockServer:
    """Running mock server; usable as a context manager."""

    def __init__(self, fixture_dir: Path | str, host: str = "127.0.0.1", port: int = 0, clock=time.time):
        fixture_dir = Path(fixture_dir)
        if not fixture_dir.is_dir():
            raise MockServerError(f"fixture directory {fixture_dir} not found")
        self.state = _State(fixture_dir, clock)
        try:
            self.httpd = ThreadingHTTPServer((host, port), _handler(self.state))
        except OSError as exc:
            raise MockServerError(f"cannot bind {host}:{port}: {exc}") from exc
        self.httpd.daemon_threads = True
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    @property
    def stats(self) -> dict:
        with self.state.lock:
            return dict(self.state.stats)

    def fail_next(self, *codes: int) -> None:
        """Answer the next requests with these HTTP status codes."""
        with self.state.lock:
            self.state.fail_queue.extend(codes)

    def drop_series(self, pid: str, kind: str, date: str) -> None:
        """Serve an empty dataset for one series."""
        with self.state.lock:
            self.state.drop.add((pid, kind, date))

    def expire_all(self) -> None:
        with self.state.lock:
            self.state.access = {k: (p, 0) for k, (p, _) in self.state.access.items()}

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        self.thread.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()


def run_mock_server(fixture_dir: Path | str, host: str = "127.0.0.1", port: int = 0, clock=time.time) -> MockServer:
    return MockServer(fixture_dir, host, port, clock)
