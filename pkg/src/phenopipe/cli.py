"""Command-line driver.

    phenopipe keygen | onboard | gen | sync | run | anomaly | compare | dash | export

The study root comes from ``--root`` or ``PHENO_ROOT``; the wearable API base
from ``--api-base``, ``PHENO_API_BASE`` or the study config. Errors are
reported as a single ``error: <Type>: <message>`` line on stderr with a
non-zero exit status.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import secrets
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .config import load_config, save_config
from .schemas import MS_PER_DAY, PAYLOAD, FeatureKind, date_to_day, day_to_date
from .store import Participant, Registry, StudyLayout, atomic_write, enroll

logger = logging.getLogger("phenopipe")

INTERVALS_MS = {"1h": 3_600_000, "1d": MS_PER_DAY, "1w": 7 * MS_PER_DAY}
STATISTICS = ("max", "min", "mean", "median", "std", "count")
# 1970-01-05 was a Monday; weekly buckets start on Mondays
_MONDAY_MS = 4 * MS_PER_DAY


class CliError(Exception):
    pass


class UnknownFeature(CliError):
    pass


# --- onboarding ---------------------------------------------------------------------------

def onboarding_payload(p: Participant, server_url: str, credential: str) -> dict:
    """What the enrolment QR code carries: identity, upload endpoint, encryption key
    and the per-participant privacy parameters the phone applies at collection."""
    return {
        "participant_id": p.participant_id,
        "server_url": server_url,
        "public_key": p.public_key,
        "credential_secret": credential,
        "contact_salt": p.contact_salt,
        "gps_offset": list(p.gps_offset),
        "tz_offset_min": p.tz_offset_min,
        "enrollment_date": p.enrollment_date,
    }


def onboard(layout: StudyLayout, registry: Registry, server_url: str, *, pid: str | None = None,
            enrollment_date: str, phone_model: str = "", tz_offset_min: int = 480,
            visit_dates: list[str] | None = None) -> dict:
    p, _ = enroll(layout, registry, pid=pid, enrollment_date=enrollment_date, phone_model=phone_model,
                  tz_offset_min=tz_offset_min, visit_dates=visit_dates)
    credential = secrets.token_urlsafe(24)
    p.credential_hash = hashlib.sha256(credential.encode()).hexdigest()
    registry.save(layout)
    return onboarding_payload(p, server_url, credential)


def import_payload(registry: Registry, payload: dict) -> Participant:
    """Register a participant from an onboarding payload (e.g. on the upload server)."""
    p = Participant(participant_id=payload["participant_id"], public_key=payload["public_key"],
                    contact_salt=payload["contact_salt"], gps_offset=tuple(payload["gps_offset"]),
                    enrollment_date=payload["enrollment_date"], visit_dates=[payload["enrollment_date"]],
                    tz_offset_min=int(payload["tz_offset_min"]),
                    credential_hash=hashlib.sha256(payload["credential_secret"].encode()).hexdigest())
    registry.add(p)
    return p


# --- plot-data export ---------------------------------------------------------------------

def _feature_column(feature: str) -> tuple[FeatureKind, str | None]:
    kind_name, _, col = feature.partition(".")
    try:
        kind = FeatureKind(kind_name)
    except ValueError:
        raise UnknownFeature(feature) from None
    numeric = [c for c, t in PAYLOAD[kind].items() if t != "str"]
    if col:
        if col not in numeric:
            raise UnknownFeature(feature)
        return kind, col
    return kind, (numeric[0] if numeric else None)


def resample(local_ms: np.ndarray, values: np.ndarray, interval: str, statistic: str) -> pd.DataFrame:
    """Statistic of ``values`` per local-time bucket; only buckets holding data appear."""
    if interval not in INTERVALS_MS:
        raise CliError(f"unknown interval {interval}")
    if statistic not in STATISTICS:
        raise CliError(f"unknown statistic {statistic}")
    width = INTERVALS_MS[interval]
    origin = _MONDAY_MS if interval == "1w" else 0
    start = (np.asarray(local_ms, dtype="int64") - origin) // width * width + origin
    df = pd.DataFrame({"bucket": start, "v": np.asarray(values, dtype=float)})
    g = df.groupby("bucket", sort=True)["v"]
    out = g.size() if statistic == "count" else getattr(g, statistic)()
    labels = pd.to_datetime(out.index.to_numpy(), unit="ms").strftime("%Y-%m-%d %H:%M")
    return pd.DataFrame({"bucket_start": list(labels), statistic: out.to_numpy()})


def export_plot_data(layout: StudyLayout, participant: str, feature: str, interval: str = "1d",
                     statistic: str = "mean", start: str | None = None, end: str | None = None) -> bytes:
    """Resampled series of one raw feature from the stage-4 tables as CSV.

    ``feature`` is ``kind`` or ``kind.column``; kinds without a numeric column
    count records. ``start``/``end`` are inclusive local dates.
    """
    from .pipeline import _extra
    from .schemas import read_typed_table

    kind, col = _feature_column(feature)
    path = layout.stage(4) / participant / f"{kind.value}.csv"
    if path.exists():
        t = read_typed_table(kind, path.read_bytes(), _extra(kind, 4))
        local = t.column("timestamp").to_numpy() + t.column("tz_offset").to_numpy() * 60_000
        vals = t.column(col).to_numpy(zero_copy_only=False).astype(float) if col else np.ones(len(local))
    else:
        local, vals = np.zeros(0, dtype="int64"), np.zeros(0)
    keep = np.ones(len(local), dtype=bool)
    if start:
        keep &= local >= date_to_day(start) * MS_PER_DAY
    if end:
        keep &= local < (date_to_day(end) + 1) * MS_PER_DAY
    out = resample(local[keep], vals[keep], interval, statistic)
    return out.to_csv(index=False, float_format="%.10g", na_rep="nan", lineterminator="\n").encode()


# --- command handlers ---------------------------------------------------------------------

def _root(args) -> Path:
    root = args.root or os.environ.get("PHENO_ROOT")
    if not root:
        raise CliError("no study root: pass --root or set PHENO_ROOT")
    return Path(root)


def _layout(args):
    root = _root(args)
    cfg = load_config(root)
    if getattr(args, "study", None):
        cfg = cfg.merged({"study": args.study})
    return StudyLayout(root, cfg.study), cfg


def _emit(text: str, out: str | None) -> None:
    if out:
        atomic_write(Path(out), text.encode() if isinstance(text, str) else text)
    else:
        sys.stdout.write(text if isinstance(text, str) else text.decode())


def _parse_range(s: str) -> tuple[int, int]:
    lo, sep, hi = s.partition(":")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {s!r}")
    return int(lo), int(hi)


def _parse_time_ms(s: str) -> int:
    t = datetime.fromisoformat(s.replace("Z", "+00:00"))
    if t.tzinfo is None:
        t = t.replace(tzinfo=timezone.utc)
    return int(t.timestamp() * 1000)


def cmd_keygen(args):
    from .crypto import generate_keypair

    kp = generate_keypair(args.seed)
    if args.out:
        atomic_write(Path(args.out), kp.private_key.hex().encode() + b"\n")
        os.chmod(args.out, 0o600)
    print(json.dumps({"public_key": kp.public_key.hex(), "private_key_file": args.out}, sort_keys=True))


def cmd_onboard(args):
    layout, cfg = _layout(args)
    layout.root.mkdir(parents=True, exist_ok=True)
    if not (layout.root / "study.json").exists():
        save_config(layout.root, cfg)
    registry = Registry.load(layout)
    if args.import_payload:
        payload = json.loads(Path(args.import_payload).read_text())
        p = import_payload(registry, payload)
        registry.save(layout)
        print(json.dumps({"imported": p.participant_id}))
        return
    if not args.enrollment_date:
        raise CliError("--enrollment-date is required")
    base = args.api_base or os.environ.get("PHENO_API_BASE") or cfg.api_base
    payload = onboard(layout, registry, base, pid=args.participant, enrollment_date=args.enrollment_date,
                      phone_model=args.phone_model or "", tz_offset_min=cfg.tz_offset_min,
                      visit_dates=args.visit_dates.split(",") if args.visit_dates else None)
    _emit(json.dumps(payload, indent=2, sort_keys=True) + "\n", args.out)


def cmd_gen(args):
    from .synthgen import DEFAULT_START, generate

    root = Path(args.out or _root(args))
    cfg = load_config(root).merged({"study": args.study}) if (root / "study.json").exists() else None
    t0 = time.perf_counter()
    info = generate(root, participants=args.participants, days=args.days, seed=args.seed,
                    lockdown_day=None if args.lockdown_day < 0 else args.lockdown_day,
                    start_date=args.start or DEFAULT_START, study=args.study or "study", cfg=cfg,
                    fixtures_dir=args.fixtures)
    logger.info("generated %d participants x %d days in %.1fs", args.participants, args.days,
                time.perf_counter() - t0)
    print(json.dumps(info, sort_keys=True))


def cmd_sync(args):
    from .wearsync import WearableClient, load_tokens, poll_all, run_mock_server

    layout, cfg = _layout(args)
    registry = Registry.load(layout)
    dates = [day_to_date(date_to_day(args.date) + i) for i in range(args.days)]
    server = None
    try:
        if args.mock_server:
            server = run_mock_server(args.mock_server)
            base = server.url
            # accounts are pre-created: adopt fixture tokens for participants without any
            tokens = load_tokens(args.mock_server)
            for pid in registry:
                p = registry.get(pid)
                if not p.tokens and pid in tokens:
                    p.tokens = tokens[pid]
            registry.save(layout)
        else:
            base = args.api_base or os.environ.get("PHENO_API_BASE") or cfg.api_base
        client = WearableClient(base)
        results = poll_all(client, layout, registry, dates, cfg, jobs=args.jobs)
    finally:
        if server is not None:
            server.stop()
    failures = [r for r in results if isinstance(r, Exception)]
    partial = sum(1 for r in results if not isinstance(r, Exception) and r.partial)
    print(json.dumps({"polled": len(results) - len(failures), "partial": partial, "failed": len(failures),
                      "refreshes": sum(r.refreshes for r in results if not isinstance(r, Exception))}))
    if failures:
        raise CliError(f"{len(failures)} poll(s) failed; first: {type(failures[0]).__name__}: {failures[0]}")


def cmd_run(args):
    from .pipeline import run_pipeline

    layout, cfg = _layout(args)
    stages = [int(s) for s in args.stages.split(",")] if args.stages else None
    for rep in run_pipeline(layout, cfg=cfg, stages=stages, jobs=args.jobs):
        print(rep.line())


def _all_dates(layout: StudyLayout) -> list[str]:
    from .pipeline import load_summaries

    base = layout.stage(5)
    days = set()
    for pdir in sorted(p for p in base.iterdir() if p.is_dir()) if base.is_dir() else []:
        _, daily = load_summaries(layout, pdir.name)
        for df in daily.values():
            days.update(int(d) for d in df["day"])
    return [day_to_date(d) for d in sorted(days)]


def cmd_anomaly(args):
    from .anomaly import update_daily

    layout, cfg = _layout(args)
    acfg = cfg.merged({"anomaly.model": args.model}).anomaly
    if args.date:
        dates = [args.date]
    else:
        dates = _all_dates(layout)
        if not args.all:
            dates = dates[-1:]
    if not dates:
        raise CliError("no summarized data to score")
    new = update_daily(layout, dates, acfg)
    print(json.dumps({"dates": len(dates), "rows": len(new)}))


def cmd_compare(args):
    from .cohortstats import WindowSpec, report_csv, window_compare

    layout, cfg = _layout(args)
    ccfg = cfg.merged({"compare.pre": args.pre, "compare.post": args.post,
                       "compare.completeness": args.completeness}).compare
    path = layout.stage(6) / "all.csv.gz"
    if not path.exists():
        raise CliError(f"{path} not found; run the pipeline first")
    table = pd.read_csv(path, na_values=["nan"], keep_default_na=False, dtype={"participant": str, "date": str})
    rows = window_compare(table, WindowSpec.from_config(args.event, ccfg),
                          args.features.split(",") if args.features else None)
    _emit(report_csv(rows).decode(), args.out)


def cmd_dash(args):
    from . import dashboards as D

    layout, cfg = _layout(args)
    dcfg = cfg.dashboards
    if args.kind == "collection":
        now = _parse_time_ms(args.now) if args.now else int(time.time() * 1000)
        text = D.render_collection(layout, now, dcfg)
    elif args.kind == "completion":
        text = D.render_completion(layout, days=args.days or dcfg.completion_days, end=args.date)
    elif args.kind == "clinician":
        today = args.date or datetime.now(timezone.utc).strftime("%Y-%m-%d")
        text = D.render_clinician(layout, today, dcfg)
    else:
        text = D.render_anomaly(layout, args.date, dcfg)
    _emit(text, args.out)


def cmd_export(args):
    layout, _ = _layout(args)
    _emit(export_plot_data(layout, args.participant, args.feature, args.interval, args.statistic,
                           args.start, args.end).decode(), args.out)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="phenopipe", description="Digital-phenotyping backend")
    ap.add_argument("--version", action="version", version=f"phenopipe {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--root", help="study root (default $PHENO_ROOT)")
    common.add_argument("--study", help="study name (default from study.json)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("keygen", parents=[common], help="create an X25519 keypair")
    p.add_argument("--out", help="write the private key here")
    p.add_argument("--seed", help="derive the key from a seed (tests only)")
    p.set_defaults(fn=cmd_keygen)

    p = sub.add_parser("onboard", parents=[common], help="enrol a participant and print the onboarding payload")
    p.add_argument("--participant", help="participant id (random if omitted)")
    p.add_argument("--enrollment-date")
    p.add_argument("--visit-dates", help="comma-separated clinic visit dates")
    p.add_argument("--phone-model")
    p.add_argument("--api-base")
    p.add_argument("--import-payload", metavar="JSON", help="register a participant from a payload file")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_onboard)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic encrypted study")
    p.add_argument("--participants", type=int, default=20)
    p.add_argument("--days", type=int, default=90)
    p.add_argument("--lockdown-day", type=int, default=45, help="negative disables the regime switch")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--start")
    p.add_argument("--out", help="study root (overrides --root)")
    p.add_argument("--fixtures", help="also write wearable mock-server fixtures here")
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("sync", parents=[common], help="download wearable data")
    p.add_argument("--date", required=True)
    p.add_argument("--days", type=int, default=1)
    p.add_argument("--mock-server", metavar="FIXTURES", help="serve these fixtures locally and sync from them")
    p.add_argument("--api-base")
    p.add_argument("--jobs", type=int, default=4)
    p.set_defaults(fn=cmd_sync)

    p = sub.add_parser("run", parents=[common], help="run the processing pipeline")
    p.add_argument("--stages", help="comma-separated subset of 1..6")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("anomaly", parents=[common], help="update the anomaly score table")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--date")
    g.add_argument("--all", action="store_true", help="score every summarized date")
    p.add_argument("--model", choices=["ar", "gp"])
    p.set_defaults(fn=cmd_anomaly)

    p = sub.add_parser("compare", parents=[common], help="before/after window comparison")
    p.add_argument("--event", required=True)
    p.add_argument("--pre", type=_parse_range)
    p.add_argument("--post", type=_parse_range)
    p.add_argument("--completeness", type=float)
    p.add_argument("--features", help="comma-separated feature names")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("dash", parents=[common], help="render a dashboard")
    p.add_argument("--kind", required=True, choices=["collection", "completion", "clinician", "anomaly"])
    p.add_argument("--out")
    p.add_argument("--now", help="collection: generation instant (ISO 8601, default now)")
    p.add_argument("--date", help="clinician: today; anomaly: score date; completion: last day")
    p.add_argument("--days", type=int, help="completion: number of days")
    p.set_defaults(fn=cmd_dash)

    p = sub.add_parser("export", parents=[common], help="export resampled plot data")
    p.add_argument("--participant", required=True)
    p.add_argument("--feature", required=True, help="kind or kind.column, e.g. heart.bpm")
    p.add_argument("--interval", choices=sorted(INTERVALS_MS), default="1d")
    p.add_argument("--statistic", choices=STATISTICS, default="mean")
    p.add_argument("--start")
    p.add_argument("--end")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_export)
    return ap


def _glue_negative_ranges(argv: list[str]) -> list[str]:
    # "--pre -45:-3" would otherwise be read as an option
    out, i = [], 0
    while i < len(argv):
        a = argv[i]
        if a in ("--pre", "--post") and i + 1 < len(argv):
            out.append(f"{a}={argv[i + 1]}")
            i += 2
            continue
        out.append(a)
        i += 1
    return out


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(_glue_negative_ranges(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.fn(args)
    except Exception as exc:
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        if args.verbose:
            logging.getLogger("phenopipe").exception("traceback")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
